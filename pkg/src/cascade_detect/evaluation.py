"""View fusion, candidate-to-lesion matching, FROC/ROC, folds and balancing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .volume import GroundTruthLesion, Volume


def aggregate_views(probs) -> float:
    """Mean of the per-view probabilities of one candidate.

    ``math.fsum`` makes the result independent of the view order.
    """
    values = [float(p) for p in probs]
    if not values:
        raise ValueError("cannot fuse an empty list of view probabilities")
    if any(not 0.0 <= p <= 1.0 for p in values):
        raise ValueError("view probabilities must lie in [0, 1]")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class CandidateScore:
    candidate_id: str
    patient_id: str
    view_probs: tuple[float, ...] = field(repr=False)
    label: str = "unknown"
    lesion_index: int = -1

    @property
    def prob(self) -> float:
        return aggregate_views(self.view_probs)

    @property
    def is_true(self) -> bool:
        return self.label == "true-lesion"


@dataclass(frozen=True)
class MatchRule:
    mode: str = "mask-containment"
    distance_mm: float = 5.0

    def __post_init__(self):
        if self.mode not in ("mask-containment", "centroid-distance"):
            raise ValueError(f"unknown match mode {self.mode!r}")
        if not self.distance_mm > 0:
            raise ValueError("distance_mm must be > 0")


def evaluable_lesions(lesions: Sequence[GroundTruthLesion]) -> list[GroundTruthLesion]:
    return [les for les in lesions if les.evaluable]


def match_candidates(candidates, lesions, rule: MatchRule = MatchRule(), volume: Volume | None = None):
    """Label each candidate true/false against the ground-truth lesions.

    Containment mode tests the voxel nearest the candidate centroid against the
    lesion masks (needs ``volume`` for the grid). Distance mode compares the
    centroid with lesion centres. ``lesion_index`` records the first hit.
    """
    out = []
    if rule.mode == "mask-containment":
        if volume is None:
            raise ValueError("mask-containment matching needs the volume geometry")
        nx, ny, nz = volume.dims
        masks = [set(np.asarray(les.voxel_indices).tolist()) for les in lesions]
        for cand in candidates:
            idx = np.rint(volume.world_to_index(cand.centroid)).astype(int)
            inside = np.all(idx >= 0) and np.all(idx < (nx, ny, nz))
            lin = int(idx[0] + nx * (idx[1] + ny * idx[2])) if inside else -1
            hit = next((k for k, m in enumerate(masks) if lin in m), -1)
            out.append(_labelled(cand, hit))
    else:
        centers = np.array([les.center for les in lesions], dtype=float).reshape(-1, 3)
        for cand in candidates:
            d = np.linalg.norm(centers - np.asarray(cand.centroid), axis=1)
            hits = np.flatnonzero(d <= rule.distance_mm)
            out.append(_labelled(cand, int(hits[np.argmin(d[hits])]) if hits.size else -1))
    return out


def _labelled(cand, hit: int):
    return replace(cand, label="true-lesion" if hit >= 0 else "false-positive", lesion_index=hit)


# -- FROC ---------------------------------------------------------------------


@dataclass(frozen=True)
class FrocPoint:
    threshold: float
    sensitivity: float
    fp_per_volume: float


def froc_curve(scores, is_true, lesion_keys, n_lesions: int, n_volumes: int) -> list[FrocPoint]:
    """FROC at every distinct score, highest threshold first.

    A candidate counts as positive when its score is >= the threshold. Each
    lesion (identified by its key) is detected at most once; unmatched
    candidates are false positives.
    """
    if n_lesions <= 0:
        raise ValueError("sensitivity is undefined without lesions")
    if n_volumes <= 0:
        raise ValueError("n_volumes must be positive")
    scores = np.asarray(scores, dtype=float)
    is_true = np.asarray(is_true, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    points = []
    seen = set()
    fp = 0
    i = 0
    while i < len(order):
        thr = scores[order[i]]
        while i < len(order) and scores[order[i]] == thr:
            k = order[i]
            if is_true[k]:
                seen.add(lesion_keys[k])
            else:
                fp += 1
            i += 1
        points.append(FrocPoint(float(thr), len(seen) / n_lesions, fp / n_volumes))
    return points


def compute_froc(scored_by_volume: Sequence[Sequence[CandidateScore]], n_lesions: int, n_volumes: int | None = None):
    """FROC over fused probabilities; volumes without candidates still count
    in the false-positive denominator when ``n_volumes`` says so."""
    scores, is_true, keys = [], [], []
    for v, group in enumerate(scored_by_volume):
        for c in group:
            scores.append(c.prob)
            is_true.append(c.is_true)
            keys.append((v, c.lesion_index))
    n_volumes = len(scored_by_volume) if n_volumes is None else n_volumes
    return froc_curve(scores, is_true, keys, n_lesions, n_volumes)


def operating_point(points: Sequence[FrocPoint], threshold: float) -> tuple[float, float]:
    """(sensitivity, fp_per_volume) when calling everything >= ``threshold``."""
    best = (0.0, 0.0)
    for p in points:
        if p.threshold >= threshold:
            best = (p.sensitivity, p.fp_per_volume)
    return best


def fp_at_sensitivity(points: Sequence[FrocPoint], target: float) -> float:
    """FP/volume at the highest threshold reaching ``target`` sensitivity.

    Returns ``inf`` if the curve never gets there.
    """
    for p in points:
        if p.sensitivity >= target - 1e-12:
            return p.fp_per_volume
    return math.inf


# -- ROC ------------------------------------------------------------------------


def _check_two_classes(labels):
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise ValueError("ROC analysis needs both positive and negative examples")
    return labels


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) starting at (0, 0); one point per distinct score."""
    labels = _check_two_classes(labels)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    fpr = np.r_[0, fp] / (~labels).sum()
    tpr = np.r_[0, tp] / labels.sum()
    return fpr, tpr, np.r_[np.inf, s[last]]


def compute_roc_auc(scores, labels) -> float:
    """Trapezoidal ROC area, computed in integer counts so it equals the
    Mann-Whitney statistic (ties = 1/2) exactly."""
    labels = _check_two_classes(labels)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[last]].astype(np.int64)
    fp = np.r_[0, np.cumsum(~y)[last]].astype(np.int64)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    return twice_area / (2 * n_pos * n_neg)


# -- folds and balancing ---------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple[str, ...], ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def test(self, i: int) -> list[str]:
        return list(self.folds[i])

    def train(self, i: int) -> list[str]:
        return [p for j, fold in enumerate(self.folds) if j != i for p in fold]

    def fold_of(self, patient_id: str) -> int:
        for i, fold in enumerate(self.folds):
            if patient_id in fold:
                return i
        raise KeyError(patient_id)

    def to_json(self) -> dict:
        return {"k": self.k, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_json(cls, d: dict) -> "FoldSplit":
        return cls(tuple(tuple(f) for f in d["folds"]))


def split_folds(patient_ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle then round-robin assignment to ``k`` folds."""
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    if k < 2 or len(ids) < k:
        raise ValueError(f"need at least k={k} >= 2 patients, got {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    folds = [[] for _ in range(k)]
    for pos, i in enumerate(perm):
        folds[pos % k].append(ids[i])
    return FoldSplit(tuple(tuple(f) for f in folds))


def balanced_indices(labels, seed: int = 0) -> np.ndarray:
    """All indices plus minority-class draws with replacement until both
    classes have the majority count."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError("balancing needs exactly two classes present")
    idx = [np.flatnonzero(labels == c) for c in classes]
    minor, major = sorted(idx, key=len)
    extra = np.random.default_rng(seed).choice(minor, size=len(major) - len(minor), replace=True)
    return np.concatenate([np.arange(len(labels)), extra])


def balance_training(X, y, seed: int = 0):
    """Oversample the minority class to a 50/50 training set."""
    idx = balanced_indices(y, seed)
    return np.asarray(X)[idx], np.asarray(y)[idx]
