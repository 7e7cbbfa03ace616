"""Command line entry point: ``cascade-detect <stage> --out DIR [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .experiment import STAGES, ExperimentConfig, StageError, run_end_to_end, run_stage


def _folds(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--folds expects comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-detect", description=__doc__)
    p.add_argument("stage", choices=STAGES + ("run",), help="pipeline stage, or 'run' for all of them")
    p.add_argument("--config", help="experiment config (JSON); defaults are used when omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--folds", type=_folds, help="fold indices for train/evaluate, e.g. 0,2")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (OSError, ValueError, TypeError) as exc:
        print(f"cascade-detect: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        if args.stage == "run":
            result = run_end_to_end(cfg, args.out)
        else:
            result = run_stage(cfg, args.stage, args.out, folds=args.folds)
    except StageError as exc:
        print(f"cascade-detect: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
