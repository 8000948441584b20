import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairskin.errors import DegenerateBatch
from fairskin.snnl import SnnlParams, snnl, snnl_and_grad, snnl_naive, snnl_per_channel


def test_identical_labels_give_zero():
    assert snnl(np.random.default_rng(0).normal(size=16), np.zeros(16)) == 0.0


def test_separated_clusters():
    assert snnl([0, 0, 10, 10], [0, 0, 1, 1]) <= 1e-6


def test_mixed_case_against_double_loop():
    naive = snnl_naive([0, 1, 0, 1], [0, 0, 1, 1], 1.0)
    # by hand: each sample has one same-label neighbour at distance 1 and
    # two others at distances 0 and 1
    e = math.exp(-1)
    by_hand = -math.log(e / (1 + 2 * e))
    assert naive == pytest.approx(by_hand, abs=1e-12)
    assert snnl([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(naive, abs=1e-12)
    assert naive == pytest.approx(1.5514, abs=1e-3)


def test_constant_channel_balanced_pair():
    assert snnl([3.0] * 4, [0, 0, 1, 1]) == pytest.approx(math.log(3), abs=1e-12)


def test_isolated_label_uses_floor():
    # sample 2 has no same-label neighbour
    v = snnl([0.0, 0.5, 1.0], [0, 0, 1])
    assert v == pytest.approx(snnl_naive([0.0, 0.5, 1.0], [0, 0, 1]), abs=1e-12)
    assert v >= -math.log(1e-12) / 3 - 1e-9


def test_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        snnl([1.0], [0])


def test_params_validation():
    with pytest.raises(ValueError):
        SnnlParams(temperature_T=0)
    with pytest.raises(ValueError):
        SnnlParams(batch_b=1)
    assert snnl([0, 1, 0, 1], [0, 0, 1, 1], SnnlParams(temperature_T=2.0)) == pytest.approx(
        snnl_naive([0, 1, 0, 1], [0, 0, 1, 1], 2.0), abs=1e-12
    )


def test_far_apart_points_do_not_underflow():
    v = snnl([0, 1, 1000, 1001], [0, 1, 0, 1])
    assert np.isfinite(v)
    assert v == pytest.approx(-math.log(1e-12), rel=1e-9)


batches = st.integers(2, 12).flatmap(
    lambda b: st.tuples(
        arrays(np.float64, (b, 3), elements=st.floats(-3, 3)),
        arrays(np.int64, (b,), elements=st.integers(0, 2)),
        st.floats(0.2, 5.0),
    )
)


@given(batches)
def test_vectorised_equals_double_loop(case):
    f, a, T = case
    assert snnl(f, a, temperature=T) == pytest.approx(snnl_naive(f, a, T), abs=1e-10)


@given(batches, st.floats(-100, 100), st.randoms(use_true_random=False))
def test_shift_and_permutation_invariance(case, c, r):
    f, a, T = case
    base = snnl(f, a, temperature=T)
    perm = list(range(len(a)))
    r.shuffle(perm)
    assert snnl(f + c, a, temperature=T) == pytest.approx(base, abs=1e-7)
    assert snnl(f[perm], a[perm], temperature=T) == pytest.approx(base, abs=1e-10)


@given(batches)
def test_non_negative(case):
    f, a, T = case
    assert snnl(f, a, temperature=T) >= 0.0


@given(batches)
def test_gradient_matches_fd(case):
    f, a, T = case
    _, g = snnl_and_grad(f, a, T)
    h = 1e-6
    fd = np.zeros_like(f)
    for idx in np.ndindex(f.shape):
        up, down = f.copy(), f.copy()
        up[idx] += h
        down[idx] -= h
        fd[idx] = (snnl(up, a, temperature=T) - snnl(down, a, temperature=T)) / (2 * h)
    assert np.allclose(g, fd, atol=1e-6, rtol=1e-5)


def test_per_channel_matches_scalar_calls():
    rng = np.random.default_rng(3)
    F = rng.normal(size=(10, 5))
    a = rng.integers(0, 2, 10)
    expect = [snnl(F[:, k], a) for k in range(5)]
    assert snnl_per_channel(F, a) == pytest.approx(expect, abs=1e-12)
