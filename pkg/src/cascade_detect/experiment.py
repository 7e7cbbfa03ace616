"""Cross-validated two-tier experiment as a chain of rerunnable stages.

Every stage reads its inputs from the output directory, writes its own
artifacts and a stage record carrying the hash of the configuration sections
it depends on. A later stage refuses to run on artifacts produced under a
different configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cnn import NetworkSpec, TrainConfig, load_model, predict_proba, reference_spec, save_model, train_sgd
from .evaluation import (
    FoldSplit,
    MatchRule,
    aggregate_views,
    balanced_indices,
    compute_roc_auc,
    evaluable_lesions,
    fp_at_sensitivity,
    froc_curve,
    match_candidates,
    roc_curve,
    split_folds,
)
from .reporting import (
    froc_series,
    svg_line_plot,
    write_auc_csv,
    write_froc_csv,
    write_roc_csv,
)
from .tier1 import Candidate, CommitteeClassifier, Tier1Config, detect, feature_matrix
from .views import ViewParams, ViewSampleConfig, draw_view_params, extract_views
from .volume import (
    PhantomSpec,
    generate_phantom,
    read_lesions,
    read_volume,
    resample_isometric,
    write_lesions,
    write_volume,
)

STAGES = ("gen-data", "tier1", "sample-views", "train", "evaluate", "report")

# config sections each stage adds to the hash of its predecessors
_SECTIONS = {
    "gen-data": ("n_lesion_phantoms", "n_control_phantoms", "phantom", "k_folds", "seed"),
    "tier1": ("tier1", "match"),
    "sample-views": ("views", "train_views", "resample_mm"),
    "train": ("network", "train"),
    "evaluate": (),
    "report": ("ablation", "sensitivity_target"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, fold: int | None = None):
        where = stage if fold is None else f"{stage} (fold {fold})"
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.fold = fold


class DependencyError(StageError):
    pass


class ConfigMismatchError(StageError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    n_lesion_phantoms: int = 40
    n_control_phantoms: int = 10
    phantom: PhantomSpec = PhantomSpec()
    tier1: Tier1Config = Tier1Config()
    views: ViewSampleConfig = ViewSampleConfig()
    train_views: ViewSampleConfig = ViewSampleConfig(n_translations=1, n_rotations=2)
    network: NetworkSpec = field(default_factory=reference_spec)
    train: TrainConfig = TrainConfig(epochs=6)
    match: MatchRule = MatchRule()
    k_folds: int = 5
    ablation: tuple[int, ...] = (1, 5, 10, 25, 50, 100)
    sensitivity_target: float = 0.8
    resample_mm: float = 1.0
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ablation", tuple(int(n) for n in self.ablation))
        n = self.n_patients
        if self.n_lesion_phantoms < 1 or self.n_control_phantoms < 0:
            raise ValueError("need at least one lesion phantom and a non-negative control count")
        if self.k_folds < 2 or self.k_folds > n:
            raise ValueError(f"k_folds={self.k_folds} needs 2 <= k <= patient count ({n})")
        if not self.ablation or min(self.ablation) < 1 or max(self.ablation) > self.views.n_views:
            raise ValueError(f"ablation values must lie in [1, {self.views.n_views}]")
        for name in ("views", "train_views"):
            v = getattr(self, name)
            if (v.channels, v.patch_px, v.patch_px) != self.network.input_shape:
                raise ValueError(f"{name} patches do not match the network input shape")
        if not 0 < self.sensitivity_target <= 1:
            raise ValueError("sensitivity_target must be in (0, 1]")
        if not self.resample_mm > 0:
            raise ValueError("resample_mm must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_patients(self) -> int:
        return self.n_lesion_phantoms + self.n_control_phantoms

    def to_dict(self) -> dict:
        return {
            "n_lesion_phantoms": self.n_lesion_phantoms,
            "n_control_phantoms": self.n_control_phantoms,
            "phantom": _jsonable(asdict(self.phantom)),
            "tier1": asdict(self.tier1),
            "views": self.views.to_dict(),
            "train_views": self.train_views.to_dict(),
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "match": asdict(self.match),
            "k_folds": self.k_folds,
            "ablation": list(self.ablation),
            "sensitivity_target": self.sensitivity_target,
            "resample_mm": self.resample_mm,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        nested = {
            "phantom": PhantomSpec.from_dict,
            "tier1": Tier1Config.from_dict,
            "views": ViewSampleConfig.from_dict,
            "train_views": ViewSampleConfig.from_dict,
            "network": NetworkSpec.from_dict,
            "train": TrainConfig.from_dict,
            "match": lambda m: MatchRule(**m),
        }
        for key, build in nested.items():
            if key in kw and isinstance(kw[key], dict):
                kw[key] = build(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def stage_hash(self, stage: str) -> str:
        keys = []
        for s in STAGES[: STAGES.index(stage) + 1]:
            keys.extend(_SECTIONS[s])
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def child_seed(master: int, stage: str, fold: int = -1, patient: int = -1, *extra) -> int:
    """Deterministic 63-bit seed from the master seed and a stage-local key."""
    key = "|".join(str(p) for p in (master, stage, fold, patient, *extra))
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little") >> 1


def patient_ids(cfg: ExperimentConfig) -> list[str]:
    return [f"p{i:03d}" for i in range(cfg.n_patients)]


# -- artifact helpers ------------------------------------------------------------


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _stage_file(out: Path, stage: str, fold: int | None = None) -> Path:
    name = stage if fold is None else f"{stage}_fold{fold}"
    return out / "stages" / f"{name}.json"


def _record_stage(cfg, out: Path, stage: str, fold: int | None = None, **info) -> None:
    _dump({"stage": stage, "fold": fold, "config_hash": cfg.stage_hash(stage), **info},
          _stage_file(out, stage, fold))


def _require(cfg, out: Path, stage: str, needed: str, fold: int | None = None) -> dict:
    path = _stage_file(out, needed, fold)
    if not path.exists():
        what = needed if fold is None else f"{needed} for fold {fold}"
        raise DependencyError(stage, f"missing artifacts of stage '{what}'; run `cascade-detect {needed}` first", fold)
    rec = _load(path)
    if rec["config_hash"] != cfg.stage_hash(needed):
        raise ConfigMismatchError(
            stage, f"artifacts of stage '{needed}' were produced with a different configuration "
            f"({rec['config_hash']} != {cfg.stage_hash(needed)}); rerun it", fold
        )
    return rec


def _log(out: Path, stage: str, fold, seconds: float, cfg) -> None:
    event = {"stage": stage, "fold": fold, "seconds": round(seconds, 3),
             "config_hash": cfg.stage_hash(stage), "status": "ok"}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "log.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(event, sort_keys=True) + "\n")


def _folds(out: Path) -> FoldSplit:
    return FoldSplit.from_json(_load(out / "folds.json"))


def _load_candidates(out: Path, pid: str) -> list[Candidate]:
    return [Candidate.from_json(c) for c in _load(out / "candidates" / f"{pid}.json")["candidates"]]


def _selected_folds(cfg, folds) -> list[int]:
    if folds is None:
        return list(range(cfg.k_folds))
    bad = [f for f in folds if not 0 <= f < cfg.k_folds]
    if bad:
        raise ValueError(f"fold indices {bad} outside 0..{cfg.k_folds - 1}")
    return sorted(set(folds))


class _VolumeCache:
    """Isotropically resampled volumes, loaded on first use."""

    def __init__(self, out: Path, spacing: float):
        self.out, self.spacing, self._cache = out, spacing, {}

    def __call__(self, pid: str):
        if pid not in self._cache:
            vol = read_volume(self.out / "data" / pid)
            iso = resample_isometric(vol, self.spacing)
            self._cache[pid] = replace(iso, data=iso.data.astype(np.float32))
        return self._cache[pid]


# -- stages ------------------------------------------------------------------------


def stage_gen_data(cfg: ExperimentConfig, out: Path) -> dict:
    pids = patient_ids(cfg)
    n_lesions = {}
    for i, pid in enumerate(pids):
        count = cfg.phantom.lesion_count if i < cfg.n_lesion_phantoms else 0
        spec = replace(cfg.phantom, seed=child_seed(cfg.seed, "gen-data", -1, i), lesion_count=count)
        vol, lesions = generate_phantom(spec)
        write_volume(vol, out / "data" / pid)
        write_lesions(lesions, out / "data" / f"{pid}_lesions.json")
        n_lesions[pid] = len(evaluable_lesions(lesions))
    folds = split_folds(pids, cfg.k_folds, child_seed(cfg.seed, "folds"))
    _dump(folds.to_json(), out / "folds.json")
    _record_stage(cfg, out, "gen-data", patients=pids, evaluable_lesions=n_lesions)
    return {"patients": len(pids), "lesions": sum(n_lesions.values())}


def stage_tier1(cfg: ExperimentConfig, out: Path) -> dict:
    _require(cfg, out, "tier1", "gen-data")
    folds = _folds(out)
    detected = {}
    for pid in patient_ids(cfg):
        vol = read_volume(out / "data" / pid)
        lesions = evaluable_lesions(read_lesions(out / "data" / f"{pid}_lesions.json"))
        cands = detect(vol, cfg.tier1, prefix=f"{pid}_c")
        detected[pid] = match_candidates(cands, lesions, cfg.match, volume=vol)
    scored = {}
    for f in range(folds.k):
        train = [c for pid in folds.train(f) for c in detected[pid]]
        y = np.array([c.is_true for c in train])
        if len(set(y.tolist())) != 2:
            raise StageError("tier1", "training candidates lack one of the two classes", f)
        committee = CommitteeClassifier(
            n_members=cfg.tier1.committee_members,
            alpha=cfg.tier1.committee_alpha,
            n_epochs=cfg.tier1.committee_epochs,
            random_state=child_seed(cfg.seed, "tier1", f) % 2**32,
        ).fit(feature_matrix(train), y)
        for pid in folds.test(f):
            cands = detected[pid]
            s = committee.decision_function(feature_matrix(cands)) if cands else []
            scored[pid] = [replace(c, tier1_score=float(v)) for c, v in zip(cands, s)]
    for pid, cands in scored.items():
        _dump({"patient": pid, "fold": folds.fold_of(pid), "candidates": [c.to_json() for c in cands]},
              out / "candidates" / f"{pid}.json")
    n = sum(len(c) for c in scored.values())
    _record_stage(cfg, out, "tier1", candidates=n)
    return {"candidates": n}


def _passes_tier1(cfg, cand: Candidate) -> bool:
    thr = cfg.tier1.operating_threshold
    return thr is None or cand.tier1_score > thr


def _params_to_json(params: list[ViewParams]) -> list[list[float]]:
    return [[p.scale_mm, p.translation_mm[0], p.translation_mm[1], p.angle_deg] for p in params]


def _params_from_json(rows) -> list[ViewParams]:
    return [ViewParams(r[0], (r[1], r[2]), r[3]) for r in rows]


def stage_sample_views(cfg: ExperimentConfig, out: Path) -> dict:
    """Draw view provenance for every kept candidate.

    Test views are drawn once per candidate; training views are drawn afresh
    for every fold the candidate trains in. Pixels are re-extracted from the
    stored parameters downstream, so manifests stay small.
    """
    _require(cfg, out, "sample-views", "tier1")
    folds = _folds(out)
    pids = patient_ids(cfg)
    kept = {pid: [c for c in _load_candidates(out, pid) if _passes_tier1(cfg, c)] for pid in pids}
    n_test = 0
    for i, pid in enumerate(pids):
        f = folds.fold_of(pid)
        rows = []
        for j, c in enumerate(kept[pid]):
            rng = np.random.default_rng(child_seed(cfg.seed, "test-views", f, i, j))
            rows.append({"candidate_id": c.id, "params": _params_to_json(draw_view_params(cfg.views, rng))})
        n_test += len(rows) * cfg.views.n_views
        _dump({"patient": pid, "fold": f, "views": rows}, out / "views" / f"test_{pid}.json")
    for f in range(folds.k):
        rows = []
        for pid in folds.train(f):
            i = pids.index(pid)
            for j, c in enumerate(kept[pid]):
                rng = np.random.default_rng(child_seed(cfg.seed, "train-views", f, i, j))
                rows.append({
                    "patient": pid,
                    "candidate_id": c.id,
                    "label": int(c.is_true),
                    "params": _params_to_json(draw_view_params(cfg.train_views, rng)),
                })
        _dump({"fold": f, "views": rows}, out / "views" / f"train_fold{f}.json")
    _record_stage(cfg, out, "sample-views", test_views=n_test)
    return {"test_views": n_test}


def _training_patches(cfg, out: Path, fold: int, volumes: _VolumeCache):
    rows = _load(out / "views" / f"train_fold{fold}.json")["views"]
    cents = {}
    X, y, owner = [], [], []
    for r in rows:
        pid = r["patient"]
        if pid not in cents:
            cents[pid] = {c.id: c.centroid for c in _load_candidates(out, pid)}
        px = extract_views(volumes(pid), cents[pid][r["candidate_id"]], _params_from_json(r["params"]),
                           cfg.train_views.patch_px, cfg.train_views.channels)
        X.append(px)
        y.extend([r["label"]] * len(px))
        owner.extend([len(X) - 1] * len(px))  # row index of the manifest entry
    shape = (0, *cfg.network.input_shape)
    return (np.concatenate(X) if X else np.zeros(shape, np.float32)), np.array(y, dtype=np.int64), np.array(owner), rows


def stage_train(cfg: ExperimentConfig, out: Path, folds=None, volumes=None) -> dict:
    volumes = volumes or _VolumeCache(out, cfg.resample_mm)
    info = {}
    for f in _selected_folds(cfg, folds):
        t0 = time.perf_counter()
        _require(cfg, out, "train", "sample-views")
        X, y, _, _ = _training_patches(cfg, out, f, volumes)
        if len(set(y.tolist())) != 2:
            raise StageError("train", "training patches lack one of the two classes", f)
        idx = balanced_indices(y, child_seed(cfg.seed, "balance", f) % 2**32)
        yb = y[idx]
        tcfg = replace(cfg.train, seed=child_seed(cfg.seed, "train", f) % 2**32)
        try:
            model = train_sgd(cfg.network, X[idx], yb, tcfg)
        except FloatingPointError as exc:
            raise StageError("train", str(exc), f) from exc
        save_model(model, out / "models" / f"fold{f}.model")
        stats = {
            "patches": int(len(y)),
            "positives": int(y.sum()),
            "balanced_positives": int(yb.sum()),
            "balanced_negatives": int(len(yb) - yb.sum()),
            "final_loss": model.metadata["final_loss"],
        }
        _record_stage(cfg, out, "train", f, **stats)
        _log(out, "train", f, time.perf_counter() - t0, cfg)
        info[f] = stats
    return info


def stage_evaluate(cfg: ExperimentConfig, out: Path, folds=None, volumes=None) -> dict:
    volumes = volumes or _VolumeCache(out, cfg.resample_mm)
    selected = _selected_folds(cfg, folds)
    for f in selected:
        _require(cfg, out, "evaluate", "train", f)
    split = _folds(out)
    info = {}
    for f in selected:
        t0 = time.perf_counter()
        model = load_model(out / "models" / f"fold{f}.model")
        test = []
        for pid in split.test(f):
            cands = {c.id: c for c in _load_candidates(out, pid)}
            for r in _load(out / "views" / f"test_{pid}.json")["views"]:
                c = cands[r["candidate_id"]]
                px = extract_views(volumes(pid), c.centroid, _params_from_json(r["params"]),
                                   cfg.views.patch_px, cfg.views.channels)
                probs = predict_proba(model, px)[:, 1]
                test.append({
                    "patient": pid,
                    "candidate_id": c.id,
                    "label": c.label,
                    "lesion_index": c.lesion_index,
                    "view_probs": [float(p) for p in probs],
                })
        X, _, owner, rows = _training_patches(cfg, out, f, volumes)
        probs = predict_proba(model, X)[:, 1] if len(X) else np.zeros(0)
        labels = {}
        for pid in {r["patient"] for r in rows}:
            labels.update({c.id: c for c in _load_candidates(out, pid)})
        train = [
            {
                "patient": r["patient"],
                "candidate_id": r["candidate_id"],
                "label": labels[r["candidate_id"]].label,
                "lesion_index": labels[r["candidate_id"]].lesion_index,
                "prob": aggregate_views(probs[owner == k]),
            }
            for k, r in enumerate(rows)
        ]
        _dump({"fold": f, "test": test, "train": train}, out / "scores" / f"fold{f}.json")
        _record_stage(cfg, out, "evaluate", f, test_candidates=len(test))
        _log(out, "evaluate", f, time.perf_counter() - t0, cfg)
        info[f] = {"test_candidates": len(test)}
    return info


def ablation_subset(n_total: int, n: int, seed: int) -> np.ndarray:
    """Indices of the ``n`` views kept when fusing fewer than all views."""
    if n >= n_total:
        return np.arange(n_total)
    return np.sort(np.random.default_rng(seed).permutation(n_total)[:n])


def stage_report(cfg: ExperimentConfig, out: Path) -> dict:
    """Regenerate every CSV/SVG and ``summary.json`` from stored scores."""
    gen = _require(cfg, out, "report", "gen-data")
    _require(cfg, out, "report", "tier1")
    split = _folds(out)
    for f in range(split.k):
        _require(cfg, out, "report", "evaluate", f)
    fold_scores = [_load(out / "scores" / f"fold{f}.json") for f in range(split.k)]
    pids = patient_ids(cfg)
    n_lesions = sum(gen["evaluable_lesions"].values())
    n_volumes = len(pids)
    target = cfg.sensitivity_target

    # tier 1: cross-validated committee scores of every detection
    t1 = [(c.tier1_score, c.is_true, (c.id.split("_")[0], c.lesion_index))
          for pid in pids for c in _load_candidates(out, pid)]
    froc1 = froc_curve([s for s, _, _ in t1], [t for _, t, _ in t1], [k for *_, k in t1], n_lesions, n_volumes)
    write_froc_csv(froc1, out / "froc_tier1.csv")
    auc1 = compute_roc_auc([s for s, _, _ in t1], [t for _, t, _ in t1])
    write_roc_csv(*roc_curve([s for s, _, _ in t1], [t for _, t, _ in t1])[:2], out / "roc_tier1.csv")

    test = [row for fs in fold_scores for row in fs["test"]]
    test.sort(key=lambda r: r["candidate_id"])
    n_full = cfg.views.n_views
    frocs, aucs = {}, {}
    for n in cfg.ablation:
        probs = []
        for r in test:
            vp = np.asarray(r["view_probs"])
            sub = ablation_subset(len(vp), n, child_seed(cfg.seed, "ablation", -1, -1, n, r["candidate_id"]))
            probs.append(aggregate_views(vp[sub]))
        is_true = [r["label"] == "true-lesion" for r in test]
        keys = [(r["patient"], r["lesion_index"]) for r in test]
        frocs[n] = froc_curve(probs, is_true, keys, n_lesions, n_volumes)
        aucs[n] = compute_roc_auc(probs, is_true)
        write_froc_csv(frocs[n], out / f"froc_tier2_N{n}.csv")
        if n == max(cfg.ablation):
            write_roc_csv(*roc_curve(probs, is_true)[:2], out / "roc_tier2.csv")
    write_auc_csv([("tier1", None, auc1)] + [("tier2", n, aucs[n]) for n in cfg.ablation], out / "auc.csv")

    # training-set fusion, pooled over folds (each fold's lesions counted separately)
    train_rows = [(f, r) for f, fs in enumerate(fold_scores) for r in fs["train"]]
    train_lesions = sum(gen["evaluable_lesions"][p] for f in range(split.k) for p in split.train(f))
    froc_train = froc_curve(
        [r["prob"] for _, r in train_rows],
        [r["label"] == "true-lesion" for _, r in train_rows],
        [(f, r["patient"], r["lesion_index"]) for f, r in train_rows],
        train_lesions,
        sum(len(split.train(f)) for f in range(split.k)),
    )
    write_froc_csv(froc_train, out / "froc_tier2_train.csv")

    n_best = max(cfg.ablation)
    fp1 = fp_at_sensitivity(froc1, target)
    fp2 = fp_at_sensitivity(frocs[n_best], target)
    x_max = max(p.fp_per_volume for p in froc1) or 1.0
    svg_line_plot(
        [
            ("tier 1 (test)", froc_series(froc1)),
            (f"tier 2 N={n_best} (test)", froc_series(frocs[n_best])),
            (f"tier 2 N={n_best} (train)", froc_series(froc_train)),
        ],
        out / "froc_compare.svg",
        title="FROC: candidate generation vs view-fused CNN",
        xlabel="false positives per volume",
        ylabel="sensitivity",
        x_max=x_max,
    )
    svg_line_plot(
        [(f"N={n}", froc_series(frocs[n])) for n in cfg.ablation],
        out / "froc_tier2_family.svg",
        title="FROC for varying number of views N",
        xlabel="false positives per volume",
        ylabel="sensitivity",
        x_max=x_max,
    )
    summary = {
        "n_volumes": n_volumes,
        "n_lesions": n_lesions,
        "tier1_candidates": len(t1),
        "tier2_candidates": len(test),
        "sensitivity_target": target,
        "tier1_fp_per_volume": fp1,
        "tier2_fp_per_volume": fp2,
        "fp_ratio": fp2 / fp1 if fp1 > 0 and math.isfinite(fp1) else math.nan,
        "tier1_auc": auc1,
        "tier2_auc": {str(n): aucs[n] for n in cfg.ablation},
    }
    _dump(_finite_json(summary), out / "summary.json")
    _record_stage(cfg, out, "report")
    return summary


def _finite_json(obj):
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


# -- driver -------------------------------------------------------------------------


def run_stage(cfg: ExperimentConfig, stage: str, out, folds=None, volumes=None):
    """Run one stage; any failure surfaces as :class:`StageError`."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if stage == "gen-data":
            result = stage_gen_data(cfg, out)
        elif stage == "tier1":
            result = stage_tier1(cfg, out)
        elif stage == "sample-views":
            result = stage_sample_views(cfg, out)
        elif stage == "train":
            return stage_train(cfg, out, folds, volumes)
        elif stage == "evaluate":
            return stage_evaluate(cfg, out, folds, volumes)
        elif stage == "report":
            result = stage_report(cfg, out)
        else:
            raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    except StageError:
        raise
    except (OSError, ValueError, FloatingPointError, RuntimeError, KeyError) as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    _log(out, stage, None, time.perf_counter() - t0, cfg)
    return result


def run_end_to_end(cfg: ExperimentConfig, out=None) -> dict:
    """All stages in order; returns the report summary plus wall time."""
    out = Path(out if out is not None else (cfg.out_dir or "cascade_out"))
    t0 = time.perf_counter()
    volumes = _VolumeCache(out, cfg.resample_mm)
    for stage in STAGES[:3]:
        run_stage(cfg, stage, out)
    run_stage(cfg, "train", out, volumes=volumes)
    run_stage(cfg, "evaluate", out, volumes=volumes)
    summary = run_stage(cfg, "report", out)
    summary["runtime_s"] = time.perf_counter() - t0
    return summary
