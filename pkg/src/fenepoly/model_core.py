"""Pointwise model functions: FENE springs, Maxwellians, equations of state.

Everything here acts on scalars or numpy arrays and has no knowledge of grids.
The parameter containers are frozen dataclasses so they can be shared freely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a model function."""


class LTWarning(UserWarning):
    """Δt is too large for the cut-off level L (Δt ≤ C₀/(L log L) violated)."""


class NotPositiveDefinite(ValueError):
    """Rouse matrix with a non-positive eigenvalue."""


# ---------------------------------------------------------------------------
# adaptive Gauss-Legendre quadrature (used for partition functions and oracles)

_GL_CACHE: dict = {}


def _gl_rule(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def adaptive_gauss_legendre(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                            rtol: float = 1e-12, order: int = 12, max_intervals: int = 20000) -> float:
    """Integrate ``f`` over [a, b] by bisection with paired Gauss-Legendre rules.

    On each panel the ``order``-point and ``2*order``-point rules are compared;
    panels whose difference exceeds their share of ``rtol`` are split.
    ``f`` must accept a numpy array of abscissae.
    """
    x1, w1 = _gl_rule(order)
    x2, w2 = _gl_rule(2 * order)

    def panel(lo, hi):
        c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
        coarse = h * np.dot(w1, f(c + h * x1))
        fine = h * np.dot(w2, f(c + h * x2))
        return fine, abs(fine - coarse)

    whole, _ = panel(a, b)
    scale = abs(whole)
    stack = [(a, b)]
    total = 0.0
    n_done = 0
    while stack:
        lo, hi = stack.pop()
        val, err = panel(lo, hi)
        share = (hi - lo) / (b - a)
        if err <= max(rtol * scale * share, 1e-300) or n_done > max_intervals:
            total += val
            n_done += 1
        else:
            mid = 0.5 * (lo + hi)
            stack.append((mid, hi))
            stack.append((lo, mid))
        scale = max(scale, abs(total))
    return float(total)


# ---------------------------------------------------------------------------
# chain structure


def linear_chain_rouse(K: int) -> np.ndarray:
    """Connectivity matrix tridiag[-1, 2, -1] of a linear bead-spring chain."""
    A = 2.0 * np.eye(K)
    if K > 1:
        A -= np.eye(K, k=1) + np.eye(K, k=-1)
    return A


def rouse_min_eigenvalue(A) -> float:
    """Smallest eigenvalue of a symmetric Rouse matrix; raises if it is not positive."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-14):
        raise ValueError("Rouse matrix must be square and symmetric")
    a0 = float(np.linalg.eigvalsh(A)[0])
    if a0 <= 0.0:
        raise NotPositiveDefinite(f"Rouse matrix has smallest eigenvalue {a0:.6g} <= 0")
    return a0


@dataclass(frozen=True)
class ChainParams:
    """Bead-spring chain with FENE springs.

    ``b`` holds the squared ball radii; ``theta`` is b/2 and ``Z`` the partition
    function of each spring, computed by adaptive quadrature at construction.
    """

    K: int = 1
    d: int = 2
    b: Tuple[float, ...] = (4.0,)
    rouse: Tuple[Tuple[float, ...], ...] = ()
    potential: str = "fene"
    theta: Tuple[float, ...] = field(init=False)
    a0: float = field(init=False)
    bead_count_coeff: int = field(init=False)
    Z: Tuple[float, ...] = field(init=False, compare=False)

    def __post_init__(self):
        if self.potential.lower() != "fene":
            raise ValueError(f"spring potential {self.potential!r} not supported: "
                             "the configuration domain must be bounded (FENE only)")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        if len(b) == 1 and self.K > 1:
            b = b * self.K
        if len(b) != self.K:
            raise ValueError("need one b_i per spring")
        for v in b:
            if not v > 2.0:
                raise ValueError("requires b_i > 2")
        A = linear_chain_rouse(self.K) if len(self.rouse) == 0 else np.asarray(self.rouse, float)
        if A.shape != (self.K, self.K):
            raise ValueError("Rouse matrix must be K x K")
        a0 = rouse_min_eigenvalue(A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "rouse", tuple(tuple(float(x) for x in row) for row in A))
        object.__setattr__(self, "theta", tuple(v / 2.0 for v in b))
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "bead_count_coeff", self.K + 1)
        object.__setattr__(self, "Z", tuple(_partition_function(v, self.d) for v in b))

    @property
    def A(self) -> np.ndarray:
        return np.array(self.rouse, dtype=float)


def _partition_function(b: float, d: int) -> float:
    R = math.sqrt(b)
    surface = 2.0 * math.pi if d == 2 else 4.0 * math.pi

    def integrand(r):
        return surface * r ** (d - 1) * np.maximum(1.0 - r * r / b, 0.0) ** (b / 2.0)

    return adaptive_gauss_legendre(integrand, 0.0, R, rtol=1e-12)


def partition_function_exact(b: float, d: int = 2) -> float:
    """Closed form of the FENE partition function (reference value for tests)."""
    if d == 2:
        return 2.0 * math.pi * b / (b + 2.0)
    # d = 3: 4 pi b^{3/2} B(3/2, b/2 + 1) / 2
    return 2.0 * math.pi * b ** 1.5 * math.exp(math.lgamma(1.5) + math.lgamma(b / 2 + 1) - math.lgamma(b / 2 + 2.5))


# ---------------------------------------------------------------------------
# springs and Maxwellian


def spring_potential(s, i: int, chain: ChainParams):
    """FENE potential U(s) = -(b/2) log(1 - 2s/b) and its derivative U'(s)."""
    b = chain.b[i]
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= b / 2.0):
        raise DomainError(f"spring potential needs 0 <= s < b/2 = {b / 2}")
    one_minus = 1.0 - 2.0 * s_arr / b
    U = -(b / 2.0) * np.log(one_minus)
    dU = 1.0 / one_minus
    if U.ndim == 0:
        return float(U), float(dU)
    return U, dU


def spring_force(q, i: int, chain: ChainParams) -> np.ndarray:
    """Elastic force F(q) = U'(|q|^2/2) q; ``q`` may carry leading batch axes."""
    q = np.asarray(q, dtype=float)
    r2 = np.sum(q * q, axis=-1)
    if np.any(r2 >= chain.b[i]):
        raise DomainError("spring force needs |q|^2 < b")
    _, dU = spring_potential(0.5 * r2, i, chain)
    return np.asarray(dU)[..., None] * q


def maxwellian(q, chain: ChainParams):
    """Normalized Maxwellian M(q) and log M(q).

    ``q`` has shape (..., K, d) or, for K=1, (..., d). On the boundary of the
    configuration domain M is exactly 0 and log M is -inf.
    """
    q = np.asarray(q, dtype=float)
    if chain.K == 1 and (q.ndim == 1 or q.shape[-2:] != (1, chain.d)):
        q = q[..., None, :]
    r2 = np.sum(q * q, axis=-1)
    logM = np.zeros(r2.shape[:-1])
    for i in range(chain.K):
        b = chain.b[i]
        x = r2[..., i]
        if np.any(x > b * (1 + 1e-15)):
            raise DomainError("maxwellian evaluated outside the configuration domain")
        one_minus = np.clip(1.0 - x / b, 0.0, None)
        with np.errstate(divide="ignore"):
            logM = logM + (b / 2.0) * np.log(one_minus) - math.log(chain.Z[i])
    M = np.exp(logM)
    if M.ndim == 0:
        return float(M), float(logM)
    return M, logM


# ---------------------------------------------------------------------------
# equations of state


@dataclass(frozen=True)
class Isentropic:
    kind: str = "isentropic"


@dataclass(frozen=True)
class Tait:
    A0: float
    A1: float
    rho_ref: float
    kind: str = "tait"


EOS = Union[Isentropic, Tait]


@dataclass(frozen=True)
class ModelParams:
    """Physical and regularization parameters of the scheme."""

    c_p: float = 1.0
    gamma: float = 2.0
    kappa: float = 0.0
    alpha: float = 0.0
    L_cut: float = 10.0
    delta: float = 0.0
    dt: float = 1e-2
    eps: float = 0.1
    lam: float = 0.5
    k_temp: float = 1.0
    z_int: float = 0.1
    mu_s: float = 1.0
    mu_b: float = 0.0
    eos: EOS = Isentropic()
    forcing: Optional[Callable] = field(default=None, compare=False)
    Gamma: float = field(init=False)

    def __post_init__(self):
        problems = validate_model_values(self)
        if problems:
            field_name, rule = problems[0]
            raise ValueError(f"{field_name}: {rule}")
        object.__setattr__(self, "Gamma", max(float(self.gamma), 8.0))


def validate_model_values(p) -> list:
    """Admissibility checks shared by ``ModelParams`` and the config parser."""
    out = []
    if not p.gamma > 1.5:
        out.append(("gamma", "requires γ > 3/2"))
    if not p.c_p > 0:
        out.append(("c_p", "requires c_p > 0"))
    if not p.kappa >= 0:
        out.append(("kappa", "requires κ ≥ 0"))
    if not p.alpha >= 0:
        out.append(("alpha", "requires α ≥ 0"))
    if not p.L_cut > 1:
        out.append(("L", "requires L > 1"))
    if not 0 <= p.delta < 1:
        out.append(("delta", "requires δ ∈ [0,1)"))
    if not p.dt > 0:
        out.append(("dt", "requires Δt > 0"))
    if not p.eps > 0:
        out.append(("eps", "requires ε > 0"))
    if not p.lam > 0:
        out.append(("lambda", "requires λ > 0"))
    if not p.k_temp > 0:
        out.append(("k", "requires k > 0"))
    if not p.z_int > 0:
        out.append(("z", "𝔷 > 0 required"))
    if not p.mu_s > 0:
        out.append(("mu_s", "requires μ^S > 0"))
    if not p.mu_b >= 0:
        out.append(("mu_b", "requires μ^B ≥ 0"))
    return out


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("density must be nonnegative")
    return rho


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def eos_pressure(rho, params: ModelParams):
    """Regularized pressure p_κ(ρ) = p(ρ) + κ(ρ^4 + ρ^Γ)."""
    rho = _check_rho(rho)
    if isinstance(params.eos, Tait):
        e = params.eos
        p = e.A0 * (rho / e.rho_ref) ** params.gamma - e.A1
    else:
        p = params.c_p * rho ** params.gamma
    p = p + params.kappa * (rho ** 4 + rho ** params.Gamma)
    return _out(p)


def pressure_primitive(rho, params: ModelParams):
    """Pressure potential P_κ with ρP_κ' - P_κ = p_κ and P_κ(0) = 0 (isentropic).

    For the Tait law the constant A1 is added so that the same identity holds.
    """
    rho = _check_rho(rho)
    g = params.gamma
    if isinstance(params.eos, Tait):
        e = params.eos
        P = e.A0 * (rho / e.rho_ref) ** g / (g - 1.0) + e.A1
    else:
        P = params.c_p * rho ** g / (g - 1.0)
    G = params.Gamma
    P = P + params.kappa * (rho ** 4 / 3.0 + rho ** G / (G - 1.0))
    return _out(P)


def pressure_primitive_derivative(rho, params: ModelParams):
    """P_κ'(ρ), the test function paired with the continuity equation."""
    rho = _check_rho(rho)
    g = params.gamma
    if isinstance(params.eos, Tait):
        e = params.eos
        dP = e.A0 * g * rho ** (g - 1.0) / (e.rho_ref ** g * (g - 1.0))
    else:
        dP = params.c_p * g * rho ** (g - 1.0) / (g - 1.0)
    G = params.Gamma
    dP = dP + params.kappa * (4.0 * rho ** 3 / 3.0 + G * rho ** (G - 1.0) / (G - 1.0))
    return _out(dP)


def lt_condition_holds(dt: float, L: float, C0: float) -> bool:
    """Time-step/cut-off coupling Δt ≤ C0 / (L log L)."""
    return dt * L * math.log(L) <= C0
