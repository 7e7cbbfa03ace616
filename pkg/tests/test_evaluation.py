import math
import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_detect.evaluation import (
    CandidateScore,
    MatchRule,
    aggregate_views,
    balance_training,
    balanced_indices,
    compute_froc,
    compute_roc_auc,
    evaluable_lesions,
    fp_at_sensitivity,
    froc_curve,
    match_candidates,
    operating_point,
    roc_curve,
    split_folds,
)
from cascade_detect.volume import GroundTruthLesion, Volume


# -- fusion ------------------------------------------------------------------


def exact_mean(values):
    return float(sum(map(Fraction, values)) / len(values))


@pytest.mark.parametrize("probs,expected", [([0.37] * 9, 0.37), ([0, 1], 0.5), ([0.2, 0.4, 0.9], 0.5)])
def test_aggregate_examples(probs, expected):
    assert aggregate_views(probs) == expected


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate_views([])
    with pytest.raises(ValueError):
        aggregate_views([0.5, 1.2])
    with pytest.raises(ValueError):
        aggregate_views([math.nan])


def test_aggregate_large_input_exact_and_permutation_invariant():
    rng = np.random.default_rng(0)
    values = rng.random(10**5).tolist()
    ref = exact_mean(values)
    assert abs(aggregate_views(values) - ref) <= 1e-12
    for seed in range(3):
        random.Random(seed).shuffle(values)
        assert aggregate_views(values) == aggregate_views(sorted(values))


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=120), st.randoms(use_true_random=False))
def test_aggregate_property(values, rnd):
    got = aggregate_views(values)
    assert abs(got - exact_mean(values)) <= 1e-12
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert aggregate_views(shuffled) == got


def test_candidate_score_prob():
    c = CandidateScore("c", "p", (0.2, 0.4, 0.9), "true-lesion", 0)
    assert c.prob == 0.5 and c.is_true


# -- matching -------------------------------------------------------------------


@dataclass(frozen=True)
class _C:
    centroid: tuple
    label: str = "unknown"
    lesion_index: int = -1


def _lesion_world():
    vol = Volume(np.zeros((20, 20, 10)), (1.0, 1.0, 2.0))
    mask = np.zeros(vol.dims, bool)
    mask[5:9, 5:9, 2:5] = True
    flat = np.flatnonzero(mask.ravel(order="F"))
    les = GroundTruthLesion((6.5, 6.5, 6.0), (2.0, 2.0, 3.0), flat, float(mask.sum() * 2.0))
    return vol, les


def test_match_centroid_inside_mask():
    vol, les = _lesion_world()
    out = match_candidates([_C((6.0, 7.0, 6.0)), _C((15.0, 15.0, 6.0))], [les], volume=vol)
    assert [c.label for c in out] == ["true-lesion", "false-positive"]
    assert out[0].lesion_index == 0 and out[1].lesion_index == -1


def test_match_distance_mode():
    _, les = _lesion_world()
    rule = MatchRule("centroid-distance", 5.0)
    far = (6.5 + 20.0, 6.5, 6.0)
    out = match_candidates([_C(far), _C((8.0, 6.5, 6.0))], [les], rule)
    assert [c.label for c in out] == ["false-positive", "true-lesion"]


def test_match_requires_volume_and_valid_rule():
    _, les = _lesion_world()
    with pytest.raises(ValueError):
        match_candidates([_C((0, 0, 0))], [les])
    with pytest.raises(ValueError):
        MatchRule(distance_mm=0)
    with pytest.raises(ValueError):
        MatchRule(mode="iou")


def test_two_candidates_one_lesion_count_once():
    vol, les = _lesion_world()
    out = match_candidates([_C((6.0, 6.0, 6.0)), _C((7.0, 7.0, 8.0))], [les], volume=vol)
    assert all(c.label == "true-lesion" for c in out)
    scored = [[CandidateScore("a", "p", (0.9,), "true-lesion", 0), CandidateScore("b", "p", (0.8,), "true-lesion", 0)]]
    points = compute_froc(scored, n_lesions=1)
    assert points[-1].sensitivity == 1.0 and points[-1].fp_per_volume == 0.0


def test_evaluable_filter():
    small = GroundTruthLesion((0, 0, 0), (1, 1, 1), np.arange(3), 250.0)
    big = GroundTruthLesion((0, 0, 0), (5, 5, 5), np.arange(400), 400.0)
    assert evaluable_lesions([small, big]) == [big]


# -- FROC ---------------------------------------------------------------------------


def test_froc_three_candidate_example():
    scored = [
        [
            CandidateScore("a", "p", (0.9,), "true-lesion", 0),
            CandidateScore("b", "p", (0.8,), "false-positive", -1),
            CandidateScore("c", "p", (0.1,), "true-lesion", 1),
        ]
    ]
    pts = {(p.threshold, p.sensitivity, p.fp_per_volume) for p in compute_froc(scored, n_lesions=2)}
    assert (0.9, 0.5, 0.0) in pts and (0.1, 1.0, 1.0) in pts
    assert operating_point(compute_froc(scored, 2), 1.5) == (0.0, 0.0)


def test_froc_all_true_has_no_fp():
    pts = froc_curve([0.3, 0.7, 0.5], [True] * 3, [0, 1, 2], 3, 2)
    assert all(p.fp_per_volume == 0 for p in pts)


def test_froc_zero_lesions_error():
    with pytest.raises(ValueError):
        froc_curve([0.5], [False], [-1], 0, 1)


def test_controls_count_in_denominator():
    scored = [[CandidateScore("a", "p", (0.9,), "false-positive")], [], []]
    assert compute_froc(scored, n_lesions=1)[0].fp_per_volume == pytest.approx(1 / 3)


def brute_froc(scores, is_true, keys, n_lesions, n_volumes):
    out = []
    for t in sorted(set(scores), reverse=True):
        on = [i for i, s in enumerate(scores) if s >= t]
        det = {keys[i] for i in on if is_true[i]}
        fp = sum(1 for i in on if not is_true[i])
        out.append((t, len(det) / n_lesions, fp / n_volumes))
    return out


def random_froc_instance(rng):
    n = rng.integers(1, 11)
    n_lesions = int(rng.integers(1, 6))
    scores = rng.choice(np.round(rng.random(6), 2), n).tolist()  # forces ties
    is_true = (rng.random(n) < 0.5).tolist()
    keys = [int(rng.integers(n_lesions)) if t else -1 for t in is_true]
    return scores, is_true, keys, n_lesions, int(rng.integers(1, 4))


def test_froc_matches_brute_force_1000():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        inst = random_froc_instance(rng)
        got = [(p.threshold, p.sensitivity, p.fp_per_volume) for p in froc_curve(*inst)]
        assert got == brute_froc(*inst)


def test_froc_monotone_and_transform_invariant():
    rng = np.random.default_rng(7)
    for _ in range(100):
        scores, is_true, keys, nl, nv = random_froc_instance(rng)
        pts = froc_curve(scores, is_true, keys, nl, nv)
        sens = [p.sensitivity for p in pts]
        fps = [p.fp_per_volume for p in pts]
        assert sens == sorted(sens) and fps == sorted(fps)
        moved = froc_curve([math.exp(3 * s) - 7 for s in scores], is_true, keys, nl, nv)
        assert [(p.sensitivity, p.fp_per_volume) for p in moved] == list(zip(sens, fps))


def test_fp_at_sensitivity():
    pts = froc_curve([0.9, 0.8, 0.7, 0.6], [True, False, True, False], [0, -1, 1, -1], 2, 2)
    assert fp_at_sensitivity(pts, 0.5) == 0.0
    assert fp_at_sensitivity(pts, 1.0) == 0.5
    assert fp_at_sensitivity(froc_curve([0.5], [False], [-1], 1, 1), 0.8) == math.inf


# -- ROC / AUC ---------------------------------------------------------------------------


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else 0 for p in pos for n in neg)
    return float(wins / (len(pos) * len(neg)))


def test_auc_examples():
    # trues {0.9, 0.4} vs false {0.6}: one pair won, one lost
    assert brute_auc([0.9, 0.4, 0.6], [1, 1, 0]) == 0.5
    assert compute_roc_auc([0.9, 0.4, 0.6], [1, 1, 0]) == 0.5
    assert compute_roc_auc([0.9, 0.6, 0.6], [1, 1, 0]) == 0.75  # tie counts 1/2
    assert compute_roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    with pytest.raises(ValueError):
        compute_roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_brute_force_1000():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(2, 101))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[0], labels[1] = True, False
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))  # 1-2 decimals: many ties
        assert compute_roc_auc(scores, labels) == brute_auc(scores.tolist(), labels.tolist())


def test_auc_random_labels_near_half():
    rng = np.random.default_rng(3)
    scores = rng.permutation(20000) / 20000
    labels = rng.random(20000) < 0.5
    assert abs(compute_roc_auc(scores, labels) - 0.5) < 0.05


def test_auc_monotone_transform_invariant():
    rng = np.random.default_rng(4)
    scores = rng.random(300)
    labels = rng.random(300) < 0.3
    assert compute_roc_auc(scores, labels) == compute_roc_auc(np.log(scores) * 2 + 1, labels)


def test_roc_curve_endpoints_and_area():
    rng = np.random.default_rng(5)
    scores = np.round(rng.random(50), 1)
    labels = rng.random(50) < 0.4
    fpr, tpr, thr = roc_curve(scores, labels)
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0, 0, 1, 1)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert math.isclose(np.trapezoid(tpr, fpr), compute_roc_auc(scores, labels), rel_tol=1e-12)


# -- folds ---------------------------------------------------------------------------------


def _ids(n):
    return [f"p{i:03d}" for i in range(n)]


def test_fold_sizes():
    assert [len(f) for f in split_folds(_ids(10), 5).folds] == [2] * 5
    assert sorted(len(f) for f in split_folds(_ids(11), 5).folds) == [2, 2, 2, 2, 3]


@settings(max_examples=50)
@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_folds_partition(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            split_folds(_ids(n), k, seed)
        return
    split = split_folds(_ids(n), k, seed)
    flat = [p for f in split.folds for p in f]
    assert sorted(flat) == _ids(n)
    sizes = [len(f) for f in split.folds]
    assert max(sizes) - min(sizes) <= 1
    assert split == split_folds(_ids(n), k, seed)
    for i in range(k):
        assert not set(split.train(i)) & set(split.test(i))
        assert all(split.fold_of(p) == i for p in split.test(i))


def test_fold_json_roundtrip():
    split = split_folds(_ids(12), 4, seed=1)
    assert type(split).from_json(split.to_json()) == split


# -- balancing ------------------------------------------------------------------------------


def test_balance_30_70():
    y = np.r_[np.ones(30, int), np.zeros(70, int)]
    X = np.arange(100)
    Xb, yb = balance_training(X, y, seed=0)
    assert Counter(yb.tolist()) == {0: 70, 1: 70}
    assert set(Xb[yb == 0].tolist()) == set(range(30, 100))  # negatives untouched
    assert set(Xb[yb == 1].tolist()) <= set(range(30))


def test_balance_already_balanced_and_single_positive():
    y = np.r_[np.ones(5, int), np.zeros(5, int)]
    assert len(balance_training(np.arange(10), y)[0]) == 10
    y = np.r_[np.ones(1, int), np.zeros(99, int)]
    Xb, yb = balance_training(np.arange(100), y)
    assert Counter(Xb[yb == 1].tolist()) == {0: 99}


def test_balance_errors_and_determinism():
    with pytest.raises(ValueError):
        balanced_indices(np.zeros(5))
    y = np.r_[np.ones(7, int), np.zeros(40, int)]
    assert np.array_equal(balanced_indices(y, 3), balanced_indices(y, 3))
