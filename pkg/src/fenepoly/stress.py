"""Moments of ψ̂: number density, Kramers tensors and the polymeric extra stress.

A ψ̂ field is an array of shape (ncell, nq) (or (nq,) for a single point in Ω).
Two quadratures are offered for the Kramers moment ∫ M ψ̂ U' q qᵀ:

* ``"nodal"``: Σ_j W_j ψ̂_j U'_j q_j q_jᵀ on the Gauss-Jacobi nodes (high order);
* ``"cell"``: Σ_j ψ̂_j ∫_cell_j M U' q qᵀ, which equals the discrete
  ∫M ∇_qψ̂ qᵀ + ϱ I obtained from the drag fluxes. The time stepper uses
  this form so that stress work and drag cancel exactly in the energy balance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discretization import ConfigGrid, DiscreteOperators
from .model_core import ModelParams


@dataclass
class StressField:
    tau: np.ndarray      # (ncell, 2, 2)
    varrho: np.ndarray   # (ncell,)
    C: np.ndarray        # (K, ncell, 2, 2)


def _as2d(psi, nq):
    psi = np.asarray(psi, dtype=float)
    single = psi.ndim == 1
    return psi.reshape(-1, nq), single


def number_density(psi, cfg: ConfigGrid) -> np.ndarray:
    """ϱ(x) = Σ_j W_j ψ̂(x, q_j)."""
    p, single = _as2d(psi, cfg.nq)
    out = p @ cfg.W
    return out[0] if single else out


def kramers_tensor(psi, cfg: ConfigGrid, i: int = 0, method: str = "nodal",
                   ops: Optional[DiscreteOperators] = None) -> np.ndarray:
    """C_i(ψ) = ∫ M ψ̂ U_i' q_i q_iᵀ dq, shape (ncell, 2, 2) or (2, 2)."""
    p, single = _as2d(psi, cfg.nq)
    if method == "nodal":
        qi = cfg.q[:, i, :]
        w = cfg.W * cfg.Uprime[:, i]
        T = w[:, None, None] * qi[:, :, None] * qi[:, None, :]
    elif method == "cell":
        T = _cell_tensors(cfg, i, ops)
    else:
        raise ValueError(f"unknown method {method!r}")
    C = np.einsum("cj,jab->cab", p, T)
    return C[0] if single else C


def _cell_tensors(cfg: ConfigGrid, i: int, ops: Optional[DiscreteOperators]) -> np.ndarray:
    if cfg.K == 1:
        if ops is not None and ops.cell_T is not None:
            return ops.cell_T
        return cfg.springs[0].cell_tensors()
    # tensor product: exact tensor of spring i times the Maxwellian mass of the others
    per = [sg.weights() for sg in cfg.springs]
    Ti = cfg.springs[i].cell_tensors()
    grids = np.meshgrid(*[np.arange(len(w)) for w in per], indexing="ij")
    idx = [g.ravel() for g in grids]
    other = np.ones(cfg.nq)
    for k in range(cfg.K):
        if k != i:
            other = other * per[k][idx[k]]
    return Ti[idx[i]] * other[:, None, None]


def extra_stress(psi, cfg: ConfigGrid, params: ModelParams, method: str = "nodal",
                 ops: Optional[DiscreteOperators] = None, k: Optional[float] = None,
                 z: Optional[float] = None) -> StressField:
    """τ = k[Σ_i C_i − (K+1)ϱ I] − 𝔷ϱ² I together with ϱ and the C_i.

    ``k`` and ``z`` override the values in ``params`` (useful for 𝔷 = 0 checks).
    """
    k = params.k_temp if k is None else k
    z = params.z_int if z is None else z
    p, single = _as2d(psi, cfg.nq)
    rho = number_density(p, cfg)
    C = np.stack([kramers_tensor(p, cfg, i, method, ops) for i in range(cfg.K)])
    eye = np.eye(2)[None]
    tau = k * (C.sum(0) - (cfg.K + 1) * rho[:, None, None] * eye) - z * (rho ** 2)[:, None, None] * eye
    if single:
        return StressField(tau[0], rho[0], C[:, 0])
    return StressField(tau, rho, C)


def polymer_stress(psi, cfg: ConfigGrid, ops: DiscreteOperators, k: float) -> np.ndarray:
    """τ₁ = k[C − (K+1)ϱ I] with the drag-consistent Kramers tensor (K = 1)."""
    p, _ = _as2d(psi, cfg.nq)
    C = kramers_tensor(p, cfg, 0, "cell", ops)
    rho = p @ cfg.W
    return k * (C - 2.0 * rho[:, None, None] * np.eye(2)[None])


def stress_load(tau: np.ndarray, ops: DiscreteOperators) -> np.ndarray:
    """Vector b with b·w = −∫ τ : ∇w on the staggered velocity grid."""
    t = np.asarray(tau, float).reshape(ops.omega.ncell, 4)
    flat = t.T.ravel()     # components (11, 12, 21, 22) stacked like cell_grad rows
    return -ops.V * (ops.cell_grad.T @ flat)


def interaction_load(varrho: np.ndarray, varrho_cut: np.ndarray, u_dir: np.ndarray,
                     ops: DiscreteOperators, z: float) -> np.ndarray:
    """Vector b with b·w = −2𝔷 ∫ ϱ̃ ∇ϱ · w, ϱ̃ taken upwind with respect to ``u_dir``.

    ϱ̃ = ∫ M β(ψ̂) dq; using the same upwind face value as the transport of ψ̂
    makes this term cancel the ϱ-equation exactly in the energy balance.
    """
    face_cut = ops.upwind_face_values(varrho_cut, u_dir)
    return -2.0 * z * ops.V * face_cut * (ops.grad_x @ varrho) * ops.free


def stress_divergence_weak(tau, w: np.ndarray, ops: DiscreteOperators, varrho=None,
                           varrho_cut=None, u_dir=None, z: float = 0.0) -> float:
    """−∫ τ : ∇w − 2𝔷 ∫ ϱ̃ ∇ϱ·w for a test velocity ``w``."""
    val = float(stress_load(tau, ops) @ w)
    if z and varrho is not None:
        vc = varrho if varrho_cut is None else varrho_cut
        ud = np.zeros(ops.omega.n_vel) if u_dir is None else u_dir
        val += float(interaction_load(varrho, vc, ud, ops, z) @ w)
    return val
