"""Sub-solvers of one time step: continuity, momentum, Fokker-Planck, initial data.

The continuity and momentum systems are small (one unknown per cell or face)
and are solved with a sparse LU factorization by default; Krylov iterations
are available through ``LinearSystem``. The Fokker-Planck matrix
V⊗W + Δtε S_x⊗W + Δt c V⊗S_q is a Kronecker sum that does not change during
a run, so it is solved exactly by diagonalizing the x and q factors once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import DiscreteOperators, drag_load, face_pair_values
from .model_core import ModelParams, eos_pressure, pressure_primitive_derivative
from .regularization import cutoff_beta, cutoff_beta_delta, entropy_mean
from .stress import interaction_load, number_density, polymer_stress, stress_load


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# linear systems


@dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    method: str = "direct"            # "direct" | "krylov"
    symmetric: bool = False
    rel_tol: float = 1e-10
    max_iter: Optional[int] = None

    def solve(self, x0: Optional[np.ndarray] = None) -> np.ndarray:
        A = sp.csc_matrix(self.matrix)
        b = np.asarray(self.rhs, float)
        if not np.any(b):
            return np.zeros_like(b)
        if self.method == "direct":
            x = spla.splu(A).solve(b)
            if not np.all(np.isfinite(x)):
                raise SolverError("direct solve produced non-finite values")
            return x
        n = b.size
        maxit = self.max_iter or max(50, int(10 * math.sqrt(n)))
        it = spla.cg if self.symmetric else spla.bicgstab
        x, info = it(A, b, x0=x0, rtol=self.rel_tol, atol=0.0, maxiter=maxit)
        if info != 0:
            raise SolverError(f"Krylov solve did not converge (info={info})")
        return x

    def is_m_matrix(self, tol: float = 0.0) -> bool:
        """Nonpositive off-diagonals, positive diagonal, weak column dominance."""
        A = sp.csr_matrix(self.matrix)
        d = A.diagonal()
        off = A - sp.diags(d)
        if np.any(d <= 0) or (off.nnz and off.data.max() > tol):
            return False
        col_off = np.asarray(abs(off).sum(axis=0)).ravel()
        return bool(np.all(d + tol * np.abs(d) >= col_off - 1e-12 * np.abs(d)))


# ---------------------------------------------------------------------------
# Fokker-Planck type Kronecker solver


class KroneckerSolver:
    """Exact solver for (V⊗W + a S_x⊗W + b V⊗S_q) Ψ = B with Ψ of shape (ncell, nq).

    V = vol·I on the uniform grid and W = diag(weights). The x factor S_x/vol
    and the q factor W^{-1/2} S_q W^{-1/2} are diagonalized once.
    """

    def __init__(self, ops: DiscreteOperators):
        self.vol = ops.V
        self.mu, self.Ux = sla.eigh(ops.stiff_x.toarray() / ops.V)
        W = ops.cfg.W
        self.w_isqrt = 1.0 / np.sqrt(W)
        Sq = ops.stiff_q.toarray()
        Sq_hat = self.w_isqrt[:, None] * Sq * self.w_isqrt[None, :]
        self.nu, self.Uq = sla.eigh(0.5 * (Sq_hat + Sq_hat.T))
        # exact kernels: constants are annihilated by both stiffness matrices
        self.mu[0] = 0.0 if abs(self.mu[0]) < 1e-10 else self.mu[0]
        self.nu[0] = 0.0 if abs(self.nu[0]) < 1e-10 else self.nu[0]

    def solve(self, B: np.ndarray, a: float, b: float) -> np.ndarray:
        Y = (B / self.vol) * self.w_isqrt[None, :]
        Yh = self.Ux.T @ Y @ self.Uq
        Yh /= 1.0 + a * self.mu[:, None] + b * self.nu[None, :]
        return (self.Ux @ Yh @ self.Uq.T) * self.w_isqrt[None, :]

    @staticmethod
    def matrix(ops: DiscreteOperators, a: float, b: float) -> sp.csr_matrix:
        """Assembled form of the same operator (for Krylov solves and oracles)."""
        ncell = ops.omega.ncell
        W = sp.diags(ops.cfg.W)
        Ix = sp.identity(ncell)
        return (sp.kron(ops.V * Ix, W) + a * sp.kron(ops.stiff_x, W) + b * sp.kron(ops.V * Ix, ops.stiff_q)).tocsr()


def _kron_solve(ops, B, a, b, method, solver: Optional[KroneckerSolver]):
    if method == "krylov":
        A = KroneckerSolver.matrix(ops, a, b)
        x = LinearSystem(A, B.ravel(), method="krylov", symmetric=True, rel_tol=1e-13).solve()
        return x.reshape(B.shape)
    solver = solver or KroneckerSolver(ops)
    return solver.solve(B, a, b)


# ---------------------------------------------------------------------------
# initial data


def project_initial_density(rho0: np.ndarray, alpha: float, ops: DiscreteOperators,
                            method: str = "direct") -> np.ndarray:
    """Solve (I − αΔ)ρ⁰ = ρ₀ with homogeneous Neumann conditions."""
    rho0 = np.asarray(rho0, float).ravel()
    if np.any(rho0 < 0):
        raise ValueError("initial density must be nonnegative")
    n = ops.omega.ncell
    A = ops.V * sp.identity(n) + alpha * ops.stiff_x
    return LinearSystem(A, ops.V * rho0, method=method, symmetric=True).solve()


def project_initial_velocity(u0: np.ndarray, rho0_reg: np.ndarray, dt: float, ops: DiscreteOperators,
                             method: str = "direct") -> np.ndarray:
    """Solve ∫ρ⁰u⁰·v + Δt∫∇u⁰:∇v = ∫ρ⁰u₀·v on the free velocity dofs."""
    free = ops.free
    rho_f = ops.cell_to_face @ np.asarray(rho0_reg, float)
    if not np.any(rho_f[free] > 0):
        raise SolverError("singular velocity projection: density vanishes")
    mass = sp.diags(ops.V * rho_f)
    A = (mass + dt * ops.vec_laplace_form)[free][:, free]
    rhs = (mass @ np.asarray(u0, float))[free]
    out = np.zeros(ops.omega.n_vel)
    out[free] = LinearSystem(A, rhs, method=method, symmetric=True).solve()
    return out


def smooth_initial_psi(psi0: np.ndarray, L: float, dt: float, ops: DiscreteOperators,
                       solver: Optional[KroneckerSolver] = None, method: str = "direct") -> np.ndarray:
    """M-weighted Helmholtz smoothing of the cut-off datum β^L(ψ̂₀)."""
    psi0 = np.asarray(psi0, float).reshape(ops.omega.ncell, ops.cfg.nq)
    if np.any(psi0 < 0):
        raise ValueError("initial ψ̂ must be nonnegative")
    B = ops.V * cutoff_beta(psi0, L) * ops.cfg.W[None, :]
    return _kron_solve(ops, B, dt, dt, method, solver)


# ---------------------------------------------------------------------------
# continuity


@dataclass
class SlabDensity:
    rho: List[np.ndarray]          # ρ_0 = ρ^{n-1}, ..., ρ_m = ρ^n
    p_bar: np.ndarray              # (1/m) Σ_{s=1..m} p_κ(ρ_s)
    dt_sub: float
    alpha_dissipation: float       # (α/m) Σ_s ∫ ∇P_κ'(ρ_s)·∇ρ_s

    @property
    def final(self) -> np.ndarray:
        return self.rho[-1]

    @property
    def m_sub(self) -> int:
        return len(self.rho) - 1


def continuity_matrix(u: np.ndarray, alpha: float, dt_sub: float, ops: DiscreteOperators) -> sp.csr_matrix:
    n = ops.omega.ncell
    adv = ops.upwind_divergence(u)
    return (ops.V * (sp.identity(n) + dt_sub * adv) + dt_sub * alpha * ops.stiff_x).tocsr()


def continuity_substep(rho_prev: np.ndarray, u: np.ndarray, params: ModelParams, m_sub: int,
                       ops: DiscreteOperators, method: str = "direct") -> SlabDensity:
    """m_sub implicit Euler substeps of ∂ρ/∂t + div(uρ) − αΔρ = 0 (upwind fluxes)."""
    if m_sub < 1:
        raise ValueError("m_sub must be >= 1")
    dt_sub = params.dt / m_sub
    A = continuity_matrix(u, params.alpha, dt_sub, ops)
    lu = spla.splu(sp.csc_matrix(A)) if method == "direct" else None
    rho = [np.asarray(rho_prev, float).copy()]
    for _ in range(m_sub):
        b = ops.V * rho[-1]
        if lu is not None:
            r = lu.solve(b)
        else:
            r = LinearSystem(A, b, method="krylov", rel_tol=1e-13).solve(x0=rho[-1])
        rho.append(r)
    return slab_from_substeps(rho, params, ops)


def slab_from_substeps(rho: List[np.ndarray], params: ModelParams, ops: DiscreteOperators) -> SlabDensity:
    """Slab pressure and α-dissipation from the substep densities ρ_0..ρ_m."""
    m_sub = len(rho) - 1
    p_sum = np.zeros_like(rho[0])
    a_diss = 0.0
    for r in rho[1:]:
        rp = np.maximum(r, 0.0)
        p_sum += eos_pressure(rp, params)
        if params.alpha > 0:
            a_diss += params.alpha * float(pressure_primitive_derivative(rp, params) @ (ops.stiff_x @ r))
    return SlabDensity(list(rho), p_sum / m_sub, params.dt / m_sub, a_diss / m_sub)


# ---------------------------------------------------------------------------
# momentum


def momentum_matrix(rho_n, rho_prev, u_prev, params: ModelParams, ops: DiscreteOperators) -> sp.csr_matrix:
    """Bilinear form b(ρⁿ)(·,·) on the full velocity space."""
    V = ops.V
    rf_n = ops.cell_to_face @ rho_n
    rf_p = ops.cell_to_face @ rho_prev
    mass = sp.diags(0.5 * V * (rf_n + rf_p))
    K = sp.diags(V * rf_p) @ ops.convection(u_prev)
    skew = 0.5 * (K - K.T)
    dt = params.dt
    return (mass + dt * params.mu_s * ops.strain_form
            + dt * (params.mu_b - params.mu_s / 2.0) * ops.divdiv_form + skew).tocsr()


def momentum_rhs(rho_n, rho_prev, u_prev, p_bar, tau1, f_face, params: ModelParams, ops: DiscreteOperators,
                 varrho=None, varrho_cut=None, u_dir=None) -> np.ndarray:
    """Linear functional ℓ_b as a vector on the full velocity space."""
    V, dt = ops.V, params.dt
    rf_n = ops.cell_to_face @ rho_n
    rf_p = ops.cell_to_face @ rho_prev
    b = V * rf_p * u_prev
    if f_face is not None:
        b = b + dt * V * rf_n * f_face
    if tau1 is not None:
        b = b + dt * stress_load(tau1, ops)
    if p_bar is not None:
        b = b + dt * V * (ops.div_x.T @ p_bar)
    if varrho is not None and params.z_int:
        ud = np.zeros_like(u_prev) if u_dir is None else u_dir
        b = b + dt * interaction_load(varrho, varrho if varrho_cut is None else varrho_cut, ud, ops, params.z_int)
    return b * ops.free


def momentum_solve(rho_n, rho_prev, u_prev, slab: Optional[SlabDensity], tau1, f_face,
                   params: ModelParams, ops: DiscreteOperators, varrho=None, varrho_cut=None,
                   u_dir=None, method: str = "direct") -> np.ndarray:
    """Velocity uⁿ of the skew-symmetrized momentum equation."""
    rho_n = np.asarray(rho_n, float)
    rho_prev = np.asarray(rho_prev, float)
    u_prev = np.asarray(u_prev, float)
    free = ops.free
    A = momentum_matrix(rho_n, rho_prev, u_prev, params, ops)[free][:, free]
    p_bar = None if slab is None else slab.p_bar
    rhs = momentum_rhs(rho_n, rho_prev, u_prev, p_bar, tau1, f_face, params, ops,
                       varrho, varrho_cut, u_dir)[free]
    out = np.zeros(ops.omega.n_vel)
    out[free] = LinearSystem(A, rhs, method=method).solve()
    return out


# ---------------------------------------------------------------------------
# Fokker-Planck


def beta_fn(params: ModelParams) -> Callable[[np.ndarray], np.ndarray]:
    if params.delta > 0:
        return lambda s: cutoff_beta_delta(s, params.L_cut, params.delta)
    return lambda s: cutoff_beta(s, params.L_cut)


def fp_load(psi_prev: np.ndarray, psi_lag: np.ndarray, u: np.ndarray, params: ModelParams,
            ops: DiscreteOperators) -> np.ndarray:
    """Right-hand side ℓ_a(ũ, β(ψ̃)) of the Fokker-Planck system, shape (ncell, nq)."""
    cfg = ops.cfg
    V, dt = ops.V, params.dt
    B = V * psi_prev * cfg.W[None, :]
    if not np.any(u):
        return B
    beta = beta_fn(params)
    # x-transport: Σ_faces V u_f W_j β(ψ̃)_upwind (φ_R − φ_L)/h
    bu = beta(ops.upwind_face_values(psi_lag, u))
    flux = (V * u)[:, None] * bu * cfg.W[None, :]
    B = B + dt * (ops.grad_x.T @ flux)
    # drag: Σ_qfaces F_f(σ) β̄_f (φ_hi − φ_lo), β̄ the chain-rule mean of the lagged iterate
    sigma = (ops.cell_grad @ u).reshape(4, -1).T
    (rl, rh), (al, ah) = face_pair_values(ops, psi_lag)
    b_rad = entropy_mean(rl, rh, params.L_cut, params.delta)
    b_ang = entropy_mean(al, ah, params.L_cut, params.delta)
    B = B + dt * V * drag_load(ops, sigma, b_rad, b_ang)
    return B


def fokker_planck_solve(psi_prev: np.ndarray, u: np.ndarray, params: ModelParams, ops: DiscreteOperators,
                        psi_lag: Optional[np.ndarray] = None, solver: Optional[KroneckerSolver] = None,
                        method: str = "direct") -> np.ndarray:
    """One linear Fokker-Planck solve with transport and drag lagged on ``psi_lag``."""
    psi_prev = np.asarray(psi_prev, float).reshape(ops.omega.ncell, ops.cfg.nq)
    lag = psi_prev if psi_lag is None else np.asarray(psi_lag, float).reshape(psi_prev.shape)
    B = fp_load(psi_prev, lag, np.asarray(u, float), params, ops)
    return _kron_solve(ops, B, params.dt * params.eps, params.dt * ops.q_coeff, method, solver)


def varrho_residual(psi_n, psi_prev, psi_lag, u, params: ModelParams, ops: DiscreteOperators) -> np.ndarray:
    """Residual of the discrete drift-diffusion equation satisfied by ϱ = ∫Mψ̂.

    V(ϱⁿ − ϱⁿ⁻¹) + Δt[ε S_x ϱⁿ − V gradᵀ(u ϱ̃_upwind)] with ϱ̃ = ∫Mβ(ψ̃).
    """
    cfg = ops.cfg
    vr_n = number_density(psi_n, cfg)
    vr_p = number_density(psi_prev, cfg)
    beta = beta_fn(params)
    vt = beta(ops.upwind_face_values(psi_lag, u)) @ cfg.W
    flux = ops.V * u * vt
    return ops.V * (vr_n - vr_p) + params.dt * (params.eps * (ops.stiff_x @ vr_n) - ops.grad_x.T @ flux)
