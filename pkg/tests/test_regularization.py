import numpy as np
import pytest
from hypothesis import given, strategies as st

from fenepoly import (DomainError, cutoff_beta, cutoff_beta_delta, entropy_F, entropy_FL, entropy_FL_delta,
                      entropy_mean)
from fenepoly.regularization import CutoffParams, entropy_F_derivative

Ls = st.floats(1.01, 50.0)
ss = st.floats(0.0, 500.0)


def test_F_at_zero():
    assert entropy_F(0.0) == 1.0
    assert entropy_F(1.0) == 0.0
    assert entropy_F_derivative(0.0) == -np.inf
    with pytest.raises(DomainError):
        entropy_F(-0.1)


def test_FL_examples():
    v, d1, d2 = entropy_FL(4.0, 2.0)
    assert (v, d1, d2) == pytest.approx((2.772588722239781, 1.6931471805599454, 0.5), rel=1e-14)
    assert entropy_FL_delta(0.0, 5.0, 0.5)[0] == pytest.approx(0.75)
    assert entropy_FL_delta(-3.0, 5.0, 0.5)[2] == 2.0


def test_cutoffs():
    assert cutoff_beta(3.0, 2.0) == 2.0
    assert cutoff_beta_delta(0.1, 2.0, 0.3) == 0.3
    with pytest.raises(ValueError):
        CutoffParams(L=1.0)
    with pytest.raises(ValueError):
        CutoffParams(L=2.0, delta=1.0)


def test_knots_take_lower_branch():
    L = 3.0
    v, d1, d2 = entropy_FL(L, L)
    assert d2 == 1 / L and v == entropy_F(L)
    v, d1, d2 = entropy_FL_delta(0.4, L, 0.4)
    assert d2 == 1 / 0.4


@given(ss, Ls)
def test_FL_continuity_at_L(s, L):
    eps = 1e-7 * L
    lo = entropy_FL(L - eps, L)
    hi = entropy_FL(L + eps, L)
    assert abs(lo[0] - hi[0]) <= 1e-5 * max(1, abs(lo[0]))
    assert abs(lo[1] - hi[1]) <= 1e-5 * max(1, abs(lo[1]))


@given(ss, Ls)
def test_FL_convex_and_above_F(s, L):
    v, _, d2 = entropy_FL(s, L)
    assert d2 > 0
    assert entropy_F(s) <= v + 4 * np.finfo(float).eps * max(1.0, v)


@given(st.floats(-5.0, 100.0), Ls, st.floats(0.01, 0.99))
def test_FL_delta_below_FL(s, L, delta):
    v = entropy_FL_delta(s, L, delta)[0]
    if s >= 0:
        assert v <= entropy_FL(s, L)[0] + 1e-12 * max(1.0, abs(v))
    assert entropy_FL_delta(s, L, delta)[2] == 1.0 / cutoff_beta_delta(s, L, delta)


@given(st.floats(1e-6, 100.0), st.floats(1e-6, 100.0), Ls)
def test_entropy_mean_chain_rule(a, b, L):
    m = entropy_mean(a, b, L)
    lo, hi = min(cutoff_beta(a, L), cutoff_beta(b, L)), max(cutoff_beta(a, L), cutoff_beta(b, L))
    assert lo * (1 - 1e-12) <= m <= hi * (1 + 1e-12)
    if abs(a - b) > 1e-3 * (a + b):
        da = entropy_FL(a, L)[1] - entropy_FL(b, L)[1]
        assert m * da == pytest.approx(a - b, rel=1e-9)


def test_entropy_mean_independent_of_L_below_L():
    a = np.array([0.3, 1.2, 2.0, 0.0])
    b = np.array([0.7, 1.2, 1.9, 0.5])
    assert np.array_equal(entropy_mean(a, b, 5.0), entropy_mean(a, b, 10.0))


def test_entropy_mean_delta():
    m = entropy_mean(0.05, 0.5, 5.0, delta=0.1)
    d = entropy_FL_delta(0.05, 5.0, 0.1)[1] - entropy_FL_delta(0.5, 5.0, 0.1)[1]
    assert m * d == pytest.approx(0.05 - 0.5, rel=1e-12)
