import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairskin.errors import InsufficientGroupData, SingleClass
from fairskin.metrics import (
    PredictionSet,
    abroca,
    auc_pair_count,
    disparate_impact,
    eodds_difference,
    eodds_from_rates,
    f1_macro,
    fairness_report,
    roc_auc,
)


def onehot_scores(pred, n=2):
    s = np.full((len(pred), n), 0.0)
    s[np.arange(len(pred)), pred] = 1.0
    return s


def binary_set(groups_spec):
    """Build a 2-class prediction set from {g: (n_pos, n_tp, n_neg, n_fp)}; class 0 is positive."""
    labels, pred, groups = [], [], []
    for g, (n_pos, n_tp, n_neg, n_fp) in groups_spec.items():
        labels += [0] * n_pos + [1] * n_neg
        pred += [0] * n_tp + [1] * (n_pos - n_tp) + [0] * n_fp + [1] * (n_neg - n_fp)
        groups += [g] * (n_pos + n_neg)
    return PredictionSet(onehot_scores(pred), labels, np.array(groups)[:, None])


def scored_set(scores_pos, labels, groups):
    """Two-class set with the class-0 probability given; class 0 positive when label is 1."""
    s = np.asarray(scores_pos, dtype=float)
    return PredictionSet(np.c_[s, 1 - s], np.where(np.asarray(labels) == 1, 0, 1), np.asarray(groups)[:, None])


def test_eodds_identical_rates_zero():
    assert eodds_difference(binary_set({0: (10, 9, 10, 2), 1: (20, 18, 10, 2)}), 0) == 0.0


def test_eodds_worked_example():
    # TPR/FPR (0.9, 0.2) vs (0.7, 0.1)
    p = binary_set({0: (10, 9, 10, 2), 1: (10, 7, 10, 1)})
    assert eodds_difference(p, 0) == pytest.approx(0.5 * (0.2 + 0.1), abs=1e-15)
    assert eodds_from_rates({0: (0.9, 0.2), 1: (0.7, 0.1)}) == pytest.approx(0.15, abs=1e-15)


def test_eodds_three_groups_max_pair():
    rates = {0: (0.9, 0.2), 1: (0.7, 0.1), 2: (0.8, 0.1)}
    pairs = [0.5 * (abs(a[0] - b[0]) + abs(a[1] - b[1])) for a, b in itertools.combinations(rates.values(), 2)]
    assert sorted(round(v, 12) for v in pairs) == [0.05, 0.1, 0.15]
    assert eodds_from_rates(rates) == pytest.approx(0.15)


def test_eodds_missing_stratum_named():
    p = binary_set({0: (10, 9, 10, 2), 1: (0, 0, 10, 1)})
    with pytest.raises(InsufficientGroupData) as info:
        eodds_difference(p, 0)
    assert info.value.group == 1 and "positive" in str(info.value)


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])[1] == 1.0
    assert roc_auc([0.9, 0.3, 0.8, 0.1], [1, 1, 0, 0])[1] == pytest.approx(0.75, abs=1e-15)
    assert roc_auc([0.9, 0.3, 0.8, 0.1], [0, 0, 1, 1])[1] == pytest.approx(0.25, abs=1e-15)


def test_auc_single_class():
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.integers(0, 2**31))
def test_auc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    scores = np.round(rng.random(n), int(rng.integers(1, 3)))  # rounding creates ties
    auc = roc_auc(scores, labels)[1]
    assert auc == pytest.approx(auc_pair_count(scores, labels), abs=1e-12)
    assert roc_auc(scores, 1 - labels)[1] == pytest.approx(1 - auc, abs=1e-12)


def test_abroca_identical_groups_zero(rng):
    s = rng.random(50)
    y = rng.integers(0, 2, 50)
    p = scored_set(np.r_[s, s], np.r_[y, y], [0] * 50 + [1] * 50)
    assert abs(abroca(p, 0)) <= 1e-12


def brute_abroca(sa, ya, sb, yb, n=200001):
    """Dense midpoint integration of |TPR_a - TPR_b| over FPR, curves interpolated linearly."""

    def curve(s, y):
        thr = np.unique(s)[::-1]
        tpr = [0.0] + [np.mean(s[y == 1] >= t) for t in thr]
        fpr = [0.0] + [np.mean(s[y == 0] >= t) for t in thr]
        return np.array(fpr), np.array(tpr)

    xs = (np.arange(n) + 0.5) / n
    fa, ta = curve(sa, ya)
    fb, tb = curve(sb, yb)
    return float(np.mean(np.abs(np.interp(xs, fa, ta) - np.interp(xs, fb, tb))))


def test_abroca_perfect_vs_random():
    rng = np.random.default_rng(0)
    n = 4000
    ya = rng.integers(0, 2, n)
    sa = np.where(ya == 1, 0.5 + 0.5 * rng.random(n), 0.5 * rng.random(n))
    yb = rng.integers(0, 2, n)
    sb = rng.random(n)
    p = scored_set(np.r_[sa, sb], np.r_[ya, yb], [0] * n + [1] * n)
    value = abroca(p, 0)
    assert value == pytest.approx(0.5, abs=0.02)
    assert value == pytest.approx(brute_abroca(sa, ya, sb, yb), abs=2e-3)


def test_abroca_monotone_invariance(rng):
    s = rng.random(200)
    y = rng.integers(0, 2, 200)
    g = rng.integers(0, 2, 200)
    a = abroca(scored_set(s, y, g), 0)
    # a strictly increasing map of the class-0 probability, rescaled to stay in [0, 1]
    t = np.exp(3 * s) / np.exp(3)
    assert abroca(scored_set(t, y, g), 0) == pytest.approx(a, abs=1e-12)


def test_group_relabeling_invariance(rng):
    s = rng.random(300)
    y = rng.integers(0, 2, 300)
    g = rng.integers(0, 3, 300)
    perm = np.array([2, 0, 1])
    a, b = scored_set(s, y, g), scored_set(s, y, perm[g])
    assert abroca(a, 0) == pytest.approx(abroca(b, 0), abs=1e-15)
    assert eodds_difference(a, 0) == pytest.approx(eodds_difference(b, 0), abs=1e-15)


def test_disparate_impact_examples():
    # positive-prediction rates 0.4 and 0.5
    p = binary_set({0: (5, 4, 5, 0), 1: (5, 5, 5, 0)})
    assert disparate_impact(p, 0) == pytest.approx(0.8, abs=1e-15)
    same = binary_set({0: (5, 4, 5, 1), 1: (10, 8, 10, 2)})
    assert disparate_impact(same, 0) == 1.0
    zero = binary_set({0: (5, 0, 5, 0), 1: (5, 5, 5, 0)})
    assert disparate_impact(zero, 0) == 0.0


def test_disparate_impact_needs_two_groups():
    with pytest.raises(InsufficientGroupData):
        disparate_impact(binary_set({0: (5, 4, 5, 1)}), 0)


def naive_f1(labels, pred, n):
    vals = []
    for c in range(n):
        tp = sum(1 for a, b in zip(labels, pred) if a == c and b == c)
        fp = sum(1 for a, b in zip(labels, pred) if a != c and b == c)
        fn = sum(1 for a, b in zip(labels, pred) if a == c and b != c)
        if tp + fp + fn:
            vals.append(2 * tp / (2 * tp + fp + fn))
    return sum(vals) / len(vals)


@given(st.integers(0, 2**31))
def test_f1_matches_naive(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, 40)
    pred = rng.integers(0, 4, 40)
    assert f1_macro(labels, pred, 4) == pytest.approx(naive_f1(labels.tolist(), pred.tolist(), 4), abs=1e-12)


@given(st.integers(0, 2**31))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    n = 80
    y = np.r_[0, 1, 0, 1, rng.integers(0, 2, n - 4)]
    g = np.r_[0, 0, 1, 1, rng.integers(0, 2, n - 4)]
    p = scored_set(rng.random(n), y, g)
    assert 0 <= eodds_difference(p, 0) <= 1
    assert 0 <= abroca(p, 0) <= 1
    assert 0 <= disparate_impact(p, 0) <= 1


def test_report_perfect_predictions():
    labels = np.array([0, 1, 2, 3] * 6)
    attrs = np.c_[(np.arange(24) // 4) % 2, np.repeat([0, 1, 2], 8)]
    p = PredictionSet(onehot_scores(labels, 4), labels, attrs, ("skin", "age"))
    r = fairness_report(p)
    assert r.accuracy == 1.0 and r.f1_macro == 1.0
    assert r.eodds == {"skin": 0.0, "age": 0.0}


def test_report_single_class_auc_is_null():
    labels = np.zeros(6, dtype=int)
    p = PredictionSet(onehot_scores(labels, 2), labels, np.array([0, 0, 0, 1, 1, 1])[:, None])
    r = fairness_report(p)
    assert r.per_group_auc["attr0"] == {"0": None, "1": None}
    assert "SingleClass" in r.errors["auc.attr0.0"]
    assert r.eodds["attr0"] is None
    json.loads(r.to_json())


def test_report_json_deterministic(rng, tmp_path):
    s = rng.random((50, 3))
    s /= s.sum(axis=1, keepdims=True)
    p = PredictionSet(s, rng.integers(0, 3, 50), rng.integers(0, 2, (50, 2)))
    assert fairness_report(p).to_json() == fairness_report(p).to_json()
    csv_text = fairness_report(p).write_group_csv(tmp_path / "g.csv").read_text()
    assert csv_text.splitlines()[0] == "attribute,group,accuracy,auc"


def test_prediction_set_validates_rows():
    with pytest.raises(ValueError):
        PredictionSet(np.array([[0.5, 0.6]]), [0], [[0]])
