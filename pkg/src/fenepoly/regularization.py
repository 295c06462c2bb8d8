"""Cut-off functions and convex regularizations of the entropy F(s) = s(log s - 1) + 1.

All functions accept scalars or numpy arrays. Knots (s == L, s == δ) are
evaluated on the lower branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import DomainError


@dataclass(frozen=True)
class CutoffParams:
    L: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.L > 1:
            raise ValueError("requires L > 1")
        if not 0 <= self.delta < 1:
            raise ValueError("requires δ ∈ [0,1)")


def _ret(x):
    return float(x) if np.ndim(x) == 0 else x


def cutoff_beta(s, L):
    """β^L(s) = min(s, L)."""
    return _ret(np.minimum(s, L))


def cutoff_beta_delta(s, L, delta):
    """β^L_δ(s) = max(min(s, L), δ)."""
    return _ret(np.maximum(np.minimum(s, L), delta))


def entropy_F(s):
    """F(s) = s(log s - 1) + 1 with F(0) = 1."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("entropy F needs s >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(s > 0, s * (np.log(np.where(s > 0, s, 1.0)) - 1.0) + 1.0, 1.0)
    return _ret(val)


def entropy_F_derivative(s):
    """F'(s) = log s, with the sentinel -inf at s = 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("entropy F needs s >= 0")
    with np.errstate(divide="ignore"):
        return _ret(np.log(s))


def entropy_FL(s, L):
    """F^L and its first two derivatives; quadratic continuation above s = L.

    Returns (value, first_deriv, second_deriv). At s = 0 the first derivative
    is -inf and the second +inf.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("entropy F^L needs s >= 0")
    L = np.asarray(L, dtype=float)
    logL = np.log(L)
    low = s <= L
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(s > 0, s, 1.0)
        v_low = np.where(s > 0, s * (np.log(safe) - 1.0) + 1.0, 1.0)
        d1_low = np.where(s > 0, np.log(safe), -np.inf)
        d2_low = np.where(s > 0, 1.0 / safe, np.inf)
    v_high = (s * s - L * L) / (2.0 * L) + s * (logL - 1.0) + 1.0
    d1_high = s / L + logL - 1.0
    d2_high = np.broadcast_to(1.0 / L, np.broadcast(s, L).shape)
    return (_ret(np.where(low, v_low, v_high)), _ret(np.where(low, d1_low, d1_high)),
            _ret(np.where(low, d2_low, d2_high)))


def entropy_FL_delta(s, L, delta):
    """F^L_δ: quadratic below δ, F^L above; defined on all of R.

    Returns (value, first_deriv, second_deriv).
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all((delta > 0) & (delta < 1)):
        raise ValueError("entropy_FL_delta needs δ ∈ (0,1)")
    s = np.asarray(s, dtype=float)
    logd = np.log(delta)
    below = s <= delta
    sp = np.where(below, 1.0, s)
    v_up, d1_up, d2_up = (np.asarray(t) for t in entropy_FL(sp, L))
    v_lo = (s * s - delta * delta) / (2.0 * delta) + s * (logd - 1.0) + 1.0
    d1_lo = s / delta + logd - 1.0
    d2_lo = np.broadcast_to(1.0 / delta, np.broadcast(s, delta).shape)
    return (_ret(np.where(below, v_lo, v_up)), _ret(np.where(below, d1_lo, d1_up)),
            _ret(np.where(below, d2_lo, d2_up)))


def entropy_mean(a, b, L, delta=0.0):
    """Edge value m(a, b) with m·(G'(a) - G'(b)) = a - b, G = F^L (or F^L_δ).

    For 0 < a, b <= L this is the logarithmic mean. It is the chain-rule
    consistent replacement of the cut-off β^L at a pair of nodes, so that
    m(a,b)·(G'(a)-G'(b)) reproduces the difference a - b exactly. Pairs where
    G' is undefined (a or b <= 0 without δ) fall back to the mean of the cut-offs.
    Nearly equal pairs return the cut-off at the midpoint.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    beta = (lambda s: np.maximum(np.minimum(s, L), delta)) if delta > 0 else (lambda s: np.minimum(s, L))
    out = 0.5 * (beta(a) + beta(b))
    mid = 0.5 * (a + b)
    close = np.abs(a - b) <= 1e-7 * (np.abs(a) + np.abs(b))
    out = np.where(close, beta(mid), out)

    lo_cut = delta if delta > 0 else 0.0
    pos = (a > lo_cut) & (b > lo_cut) & ~close
    # both on the logarithmic branch: stable form (a+b) t / (2 atanh t)
    logb = pos & (a <= L) & (b <= L)
    if np.any(logb):
        aa, bb = a[logb] if a.ndim else a, b[logb] if b.ndim else b
        t = (aa - bb) / (aa + bb)
        val = (aa + bb) * t / (2.0 * np.arctanh(t))
        out = _assign(out, logb, val)
    # both above L: G'' = 1/L, mean is L
    high = ~close & (a > L) & (b > L)
    out = np.where(high, L, out)
    if delta > 0:
        low = ~close & (a <= delta) & (b <= delta)
        out = np.where(low, delta, out)
        mixed = ~close & ~logb & ~high & ~low
        if np.any(mixed):
            ga = np.asarray(entropy_FL_delta(a, L, delta)[1])
            gb = np.asarray(entropy_FL_delta(b, L, delta)[1])
            with np.errstate(invalid="ignore", divide="ignore"):
                val = (a - b) / (ga - gb)
            out = np.where(mixed, val, out)
    else:
        mixed = pos & ~logb & ~high
        if np.any(mixed):
            sa = np.where(a > 0, a, 1.0)
            sb = np.where(b > 0, b, 1.0)
            ga = np.asarray(entropy_FL(sa, L)[1])
            gb = np.asarray(entropy_FL(sb, L)[1])
            with np.errstate(invalid="ignore", divide="ignore"):
                val = (a - b) / (ga - gb)
            out = np.where(mixed, val, out)
    return _ret(out)


def _assign(out, mask, val):
    out = np.array(out, dtype=float, copy=True)
    if out.ndim == 0:
        return np.asarray(val, dtype=float).reshape(())
    out[mask] = val
    return out
