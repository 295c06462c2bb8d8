"""Coupled time stepper with Picard coupling and the discrete energy ledger."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .discretization import ConfigGrid, DiscreteOperators, OmegaGrid, assemble_operators
from .model_core import ChainParams, LTWarning, ModelParams, lt_condition_holds, pressure_primitive
from .regularization import entropy_F
from .solvers import (KroneckerSolver, SlabDensity, beta_fn, continuity_substep, fokker_planck_solve,
                      momentum_solve, project_initial_density, project_initial_velocity,
                      smooth_initial_psi, varrho_residual)
from .stress import number_density, polymer_stress


class PicardDiverged(RuntimeError):
    def __init__(self, message: str, residual_history: List[float], step: Optional[int] = None):
        super().__init__(message)
        self.residual_history = list(residual_history)
        self.step = step


@dataclass
class Controls:
    max_iter: int = 50
    tol: float = 1e-10
    damping: float = 1.0
    min_damping: float = 1.0 / 64
    m_sub: int = 4
    C0_LT: float = 1.0
    C_q: float = 0.0
    method: str = "direct"
    probe_uniqueness: bool = False


@dataclass
class State:
    t: float
    step: int
    rho: np.ndarray                  # (ncell,)
    u: np.ndarray                    # (n_vel,) staggered
    psi: np.ndarray                  # (ncell, nq)
    f_face: Optional[np.ndarray] = None
    slab: Optional[SlabDensity] = None
    picard_iters: int = 0
    picard_history: List[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def copy(self) -> "State":
        return replace(self, rho=self.rho.copy(), u=self.u.copy(), psi=self.psi.copy(),
                       picard_history=list(self.picard_history), info=dict(self.info))


class Problem:
    """Grids, operators, parameters and forcing of one simulation."""

    def __init__(self, omega: OmegaGrid, cfg: ConfigGrid, chain: ChainParams, params: ModelParams,
                 controls: Optional[Controls] = None, forcing: Optional[Callable] = None):
        self.omega, self.cfg, self.chain, self.params = omega, cfg, chain, params
        self.controls = controls or Controls()
        self.forcing = forcing if forcing is not None else params.forcing
        self.ops: DiscreteOperators = assemble_operators(omega, cfg, chain, params)
        self.fp_solver = KroneckerSolver(self.ops)
        self._face_xy = omega.face_coords()

    def with_params(self, **changes) -> "Problem":
        """Same grids and operators with some parameters changed (reuses the assembly when possible)."""
        p = replace(self.params, **changes)
        new = object.__new__(Problem)
        new.__dict__.update(self.__dict__)
        new.params = p
        if p.eps != self.params.eps or p.lam != self.params.lam:
            new.ops = assemble_operators(self.omega, self.cfg, self.chain, p)
            new.fp_solver = self.fp_solver
        return new

    def forcing_faces(self, t_mid: float) -> np.ndarray:
        """Forcing sampled at the velocity nodes at the slab midpoint."""
        n = self.omega.n_vel
        if self.forcing is None:
            return np.zeros(n)
        (xu, yu), (xv, yv) = self._face_xy
        fx = np.broadcast_to(np.asarray(self.forcing(xu, yu, t_mid)[0], float), xu.shape)
        fy = np.broadcast_to(np.asarray(self.forcing(xv, yv, t_mid)[1], float), xv.shape)
        return self.omega.join_velocity(fx, fy) * self.ops.free


# ---------------------------------------------------------------------------
# initial data


def initial_state(problem: Problem, rho0, u0, psi0, smooth: bool = True) -> State:
    """Mollified initial triple (ρ⁰, u⁰, ψ̂⁰) from raw samples."""
    ops, p = problem.ops, problem.params
    om, cfg = problem.omega, problem.cfg
    rho0 = np.broadcast_to(np.asarray(rho0, float), (om.ncell,)).copy()
    u0 = np.broadcast_to(np.asarray(u0, float), (om.n_vel,)).copy() * ops.free
    psi0 = np.broadcast_to(np.asarray(psi0, float), (om.ncell, cfg.nq)).copy()
    if smooth:
        rho = project_initial_density(rho0, p.alpha, ops) if p.alpha > 0 else rho0
        u = project_initial_velocity(u0, rho, p.dt, ops) if np.any(u0) else np.zeros(om.n_vel)
        psi = smooth_initial_psi(psi0, p.L_cut, p.dt, ops, problem.fp_solver)
    else:
        rho, u, psi = rho0, u0, psi0
    return State(0.0, 0, rho, u, psi, f_face=np.zeros(om.n_vel))


# ---------------------------------------------------------------------------
# one time step


def _rel_change(new, old) -> float:
    scale = max(1.0, float(np.max(np.abs(new))) if new.size else 1.0)
    return float(np.max(np.abs(new - old))) / scale if new.size else 0.0


def _sweep(problem: Problem, prev: State, u_it, psi_it, f_face):
    ops, p, c = problem.ops, problem.params, problem.controls
    slab = continuity_substep(prev.rho, u_it, p, c.m_sub, ops, c.method)
    psi = fokker_planck_solve(prev.psi, u_it, p, ops, psi_lag=psi_it, solver=problem.fp_solver,
                              method=c.method)
    tau1 = polymer_stress(psi, problem.cfg, ops, p.k_temp)
    vr = number_density(psi, problem.cfg)
    vr_cut = number_density(beta_fn(p)(psi), problem.cfg) if p.z_int else None
    u = momentum_solve(slab.final, prev.rho, prev.u, slab, tau1, f_face, p, ops,
                       varrho=vr, varrho_cut=vr_cut, u_dir=u_it, method=c.method)
    return slab, psi, u


def _iterate(problem: Problem, prev: State, f_face, damping: float):
    c = problem.controls
    u_it, psi_it, rho_it = prev.u.copy(), prev.psi.copy(), prev.rho.copy()
    history: List[float] = []
    omega = damping
    for it in range(1, c.max_iter + 1):
        slab, psi, u = _sweep(problem, prev, u_it, psi_it, f_face)
        r = max(_rel_change(slab.final, rho_it), _rel_change(u, u_it), _rel_change(psi, psi_it))
        history.append(r)
        if not np.isfinite(r):
            break
        if r <= c.tol:
            return slab, psi, u, it, history
        if len(history) > 1 and r > history[-2]:
            omega = max(c.min_damping, 0.5 * omega)
        u_it = u_it + omega * (u - u_it)
        psi_it = psi_it + omega * (psi - psi_it)
        rho_it = slab.final
    raise PicardDiverged(f"Picard iteration did not reach tol={c.tol:g} "
                         f"(last residual {history[-1]:.3e})", history, prev.step + 1)


def picard_step(prev: State, problem: Problem) -> State:
    """Advance one step; returns the new state (picard_iters set)."""
    p, c = problem.params, problem.controls
    if not lt_condition_holds(p.dt, p.L_cut, c.C0_LT):
        warnings.warn(f"dt={p.dt:g} violates dt <= C0/(L log L) for L={p.L_cut:g}, C0={c.C0_LT:g}",
                      LTWarning, stacklevel=2)
    f_face = problem.forcing_faces(prev.t + 0.5 * p.dt)
    slab, psi, u, iters, history = _iterate(problem, prev, f_face, c.damping)
    new = State(prev.t + p.dt, prev.step + 1, slab.final, u, psi, f_face=f_face, slab=slab,
                picard_iters=iters, picard_history=history)
    if c.probe_uniqueness:
        try:
            slab2, psi2, u2, _, _ = _iterate(problem, prev, f_face, 0.5 * c.damping)
            gap = max(_rel_change(slab2.final, slab.final), _rel_change(u2, u), _rel_change(psi2, psi))
            new.info["uniqueness_gap"] = gap
            if gap > 100 * c.tol:
                new.info["nonunique"] = True
                new.info["alternate"] = State(new.t, new.step, slab2.final, u2, psi2, f_face=f_face,
                                              slab=slab2)
        except PicardDiverged:
            new.info["uniqueness_gap"] = math.nan
    vres = varrho_residual(psi, prev.psi, psi, u, p, problem.ops)
    new.info["varrho_residual"] = float(np.max(np.abs(vres))) / problem.ops.V
    return new


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class EnergyReport:
    step: int
    t: float
    kinetic: float
    internal: float
    entropy: float
    interaction: float
    dissipation: float
    work: float
    total: float
    residual: float
    tol: float
    passed: bool
    terms: dict = field(default_factory=dict)


def energy_terms(state: State, problem: Problem) -> dict:
    """Kinetic, internal, entropy and interaction energies of one state."""
    ops, p, cfg = problem.ops, problem.params, problem.cfg
    V = ops.V
    rho_f = ops.cell_to_face @ state.rho
    kinetic = 0.5 * V * float(np.sum(rho_f * state.u ** 2))
    internal = V * float(np.sum(pressure_primitive(np.maximum(state.rho, 0.0), p)))
    F = entropy_F(np.maximum(state.psi, 0.0))
    entropy = p.k_temp * V * float(np.sum(F @ cfg.W))
    vr = number_density(state.psi, cfg)
    interaction = p.z_int * V * float(vr @ vr)
    return {"kinetic": kinetic, "internal": internal, "entropy": entropy, "interaction": interaction,
            "total": kinetic + internal + entropy + interaction}


def dissipation_terms(state: State, problem: Problem) -> dict:
    """Dissipation rates evaluated at the new time level (left-endpoint structure of the scheme)."""
    ops, p, cfg = problem.ops, problem.params, problem.cfg
    u = state.u
    viscous = p.mu_s * float(u @ (ops.strain_form @ u)) \
        + (p.mu_b - p.mu_s / 2.0) * float(u @ (ops.divdiv_form @ u))
    sq = np.sqrt(np.maximum(state.psi, 0.0))
    fisher_q = ops.V * float(np.sum(sq * (ops.stiff_q @ sq.T).T))
    fisher_x = float(np.sum((sq * (ops.stiff_x @ sq)) @ cfg.W))
    a0 = problem.chain.a0
    vr = number_density(state.psi, cfg)
    terms = {
        "viscous": viscous,
        "fisher_q": a0 * p.k_temp / (2.0 * p.lam) * fisher_q,
        "fisher_x": 2.0 * p.eps * p.k_temp * fisher_x,
        "alpha": state.slab.alpha_dissipation if state.slab is not None else 0.0,
        "varrho_grad": 2.0 * p.z_int * p.eps * float(vr @ (ops.stiff_x @ vr)),
    }
    terms["total"] = sum(terms.values())
    return terms


def forcing_work(state: State, problem: Problem) -> float:
    if state.f_face is None or not np.any(state.f_face):
        return 0.0
    rho_f = problem.ops.cell_to_face @ state.rho
    return problem.ops.V * float(np.sum(rho_f * state.f_face * state.u))


def energy_tolerance(E_prev: float, problem: Problem) -> float:
    c, om = problem.controls, problem.omega
    h = max(om.hx, om.hy)
    return 10.0 * (c.tol + c.C_q * (h * h + problem.params.dt)) * max(1.0, abs(E_prev))


def energy_ledger(state_n: State, state_prev: State, problem: Problem) -> EnergyReport:
    e_n = energy_terms(state_n, problem)
    e_p = energy_terms(state_prev, problem)
    dt = problem.params.dt
    diss = dissipation_terms(state_n, problem)
    work = forcing_work(state_n, problem)
    residual = e_n["total"] + dt * diss["total"] - e_p["total"] - dt * work
    tol = energy_tolerance(e_p["total"], problem)
    values = [*e_n.values(), *diss.values(), work, residual]
    ok = bool(all(np.isfinite(values)) and residual <= tol)
    return EnergyReport(state_n.step, state_n.t, e_n["kinetic"], e_n["internal"], e_n["entropy"],
                        e_n["interaction"], diss["total"], work, e_n["total"], residual, tol, ok, diss)


def initial_report(state: State, problem: Problem) -> EnergyReport:
    e = energy_terms(state, problem)
    return EnergyReport(state.step, state.t, e["kinetic"], e["internal"], e["entropy"], e["interaction"],
                        0.0, 0.0, e["total"], 0.0, energy_tolerance(e["total"], problem), True, {})


def conservation_report(state: State, state0: State, problem: Problem) -> dict:
    V, W = problem.ops.V, problem.cfg.W
    m_rho0 = V * float(np.sum(state0.rho))
    m_psi0 = V * float(np.sum(state0.psi @ W))
    m_rho = V * float(np.sum(state.rho))
    m_psi = V * float(np.sum(state.psi @ W))
    vr = number_density(state.psi, problem.cfg)
    return {
        "mass_rho_err": abs(m_rho - m_rho0) / max(abs(m_rho0), 1e-300),
        "mass_psi_err": abs(m_psi - m_psi0) / max(abs(m_psi0), 1e-300),
        "min_rho": float(np.min(state.rho)),
        "min_psi": float(np.min(state.psi)),
        "varrho_L2": math.sqrt(V * float(vr @ vr)),
    }


def step_many(state: State, problem: Problem, n_steps: int, callback: Optional[Callable] = None) -> State:
    """Advance ``n_steps`` steps; ``callback(new, prev)`` is called after every step."""
    for _ in range(n_steps):
        new = picard_step(state, problem)
        if callback is not None:
            callback(new, state)
        state = new
    return state


def run_simulation(config, out_dir=None):
    """Run a parsed Config and write diagnostics/dumps; returns the run directory."""
    from .runner import run_config
    return run_config(config, out_dir)
