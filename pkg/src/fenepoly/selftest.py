"""Headless invariant checks used by ``fenepoly selftest``."""
from __future__ import annotations

import time
from typing import Callable, List, Tuple

import numpy as np

from .discretization import OmegaGrid, assemble_operators, build_config_grid, drag_weak
from .model_core import ChainParams, ModelParams, partition_function_exact
from .regularization import cutoff_beta, entropy_F, entropy_FL
from .scheme import Problem, conservation_report, energy_ledger, initial_state, picard_step
from .stress import extra_stress

Result = Tuple[str, bool, str]


def _regularization(rng) -> Result:
    s = rng.uniform(0, 50, 20000)
    L = rng.uniform(1.01, 20, s.size)
    bad = 0
    for si, Li in zip(s[:2000], L[:2000]):
        v, _, d2 = entropy_FL(si, Li)
        if si > 0:
            beta = cutoff_beta(si, Li)
            # d2 is the correctly rounded reciprocal of β; the product is 1 up to one rounding
            bad += d2 != 1.0 / beta or abs(d2 * beta - 1.0) > np.finfo(float).eps
        bad += entropy_F(si) > v + 1e-12 * max(1.0, v)
    return "regularization identities", bad == 0, f"{bad} failures over 2000 samples"


def _quadrature(rng) -> Result:
    chain = ChainParams(b=(4.0,))
    cfg = build_config_grid(chain, 32, 32)
    z_err = abs(cfg.z_grid[0] / partition_function_exact(4.0) - 1)
    ok = abs(cfg.W.sum() - 1) <= 1e-10 and z_err <= 1e-8
    return "Maxwellian quadrature", ok, f"ΣW-1={cfg.W.sum() - 1:.1e}, Z rel err={z_err:.1e}"


def _kramers(rng) -> Result:
    chain = ChainParams(b=(4.0,))
    cfg = build_config_grid(chain, 32, 32)
    p = ModelParams()
    st = extra_stress(np.ones(cfg.nq), cfg, p)
    err = np.abs(st.C[0] - np.eye(2)).max()
    return "Kramers equilibrium identity", err <= 5e-4, f"max |C-I| = {err:.2e}"


def _operators(rng) -> Result:
    chain = ChainParams(b=(4.0,))
    cfg = build_config_grid(chain, 8, 8)
    worst = 0.0
    for bc in ("periodic", "noslip"):
        om = OmegaGrid(6, 5, 1.0, 0.7, bc)
        ops = assemble_operators(om, cfg, chain, ModelParams())
        v = rng.standard_normal(om.n_vel) * ops.free
        w = rng.standard_normal(om.ncell)
        worst = max(worst, abs(v @ (ops.grad_x @ w) + w @ (ops.div_x @ v)) / (np.linalg.norm(v) * np.linalg.norm(w)))
        worst = max(worst, np.abs(ops.stiff_x @ np.ones(om.ncell)).max(), np.abs(ops.stiff_q @ np.ones(cfg.nq)).max())
    return "summation by parts / conservation", worst <= 1e-12, f"worst defect {worst:.1e}"


def _intbyparts(rng) -> Result:
    """∫M∇φ·Bq = ∫Mφ(U' qᵀBq − trB) for random smooth φ and B, checked under refinement."""
    chain = ChainParams(b=(4.0,))
    coeffs = rng.standard_normal((20, 8))
    Bs = rng.standard_normal((20, 2, 2))
    rms = []
    for n in (16, 32):
        cfg = build_config_grid(chain, n, n)
        ops = assemble_operators(OmegaGrid(4, 4), cfg, chain)
        x, y = cfg.q[:, 0, 0], cfg.q[:, 0, 1]
        phi = np.stack([c[0] + c[1] * x + c[2] * y * y + c[3] * x * y + c[4] * np.sin(c[5] * x + c[6] * y)
                        + c[7] * np.exp(0.3 * x) for c in coeffs])
        lhs = drag_weak(ops, Bs.reshape(20, 4), 1.0, 1.0, phi)
        quad = (np.einsum("ja,pab,jb->pj", cfg.q[:, 0, :], Bs, cfg.q[:, 0, :]) * cfg.Uprime[:, 0]
                - np.trace(Bs, axis1=1, axis2=2)[:, None])
        rms.append(float(np.sqrt(np.mean((lhs - np.sum(cfg.W * phi * quad, axis=1)) ** 2))))
    ok = rms[1] <= 1e-8 + 1.25 * rms[0] / 4
    return "integration by parts in q", ok, f"RMS errors {rms[0]:.2e} -> {rms[1]:.2e}"


def _equilibrium(rng) -> Result:
    chain = ChainParams(b=(4.0,))
    cfg = build_config_grid(chain, 8, 8)
    pb = Problem(OmegaGrid(4, 4), cfg, chain, ModelParams(dt=0.05, kappa=0.1, alpha=0.1, L_cut=3.0))
    s0 = initial_state(pb, 1.0, 0.0, 1.0)
    s, iters = s0, []
    for _ in range(5):
        s = picard_step(s, pb)
        iters.append(s.picard_iters)
    dev = max(np.abs(s.rho - 1).max(), np.abs(s.u).max(), np.abs(s.psi - 1).max())
    return "equilibrium stationarity", dev <= 1e-11 and max(iters) == 1, f"deviation {dev:.1e}, iters {iters}"


def _short_run(rng) -> Result:
    chain = ChainParams(b=(4.0,))
    cfg = build_config_grid(chain, 8, 8)
    om = OmegaGrid(4, 4, bc="noslip")
    pb = Problem(om, cfg, chain, ModelParams(dt=0.01),
                 forcing=lambda x, y, t: (np.exp(-((1 - y) / 0.2) ** 2), 0 * x))
    q = cfg.q[:, 0, :]
    psi0 = 1 + 0.3 * rng.uniform(-1, 1, om.ncell)[:, None] * (q[:, 0] * q[:, 1])[None, :] / 2
    s0 = initial_state(pb, 1.0 + 0.1 * rng.random(om.ncell), 0.0, psi0)
    s, worst, fails = s0, 0.0, 0
    for _ in range(10):
        new = picard_step(s, pb)
        rep = energy_ledger(new, s, pb)
        c = conservation_report(new, s0, pb)
        worst = max(worst, c["mass_rho_err"], c["mass_psi_err"])
        fails += not rep.passed or c["min_rho"] < 0
        s = new
    return "forced run conservation and energy", worst <= 1e-12 and fails == 0, \
        f"mass error {worst:.1e}, energy failures {fails}"


CHECKS: List[Callable] = [_regularization, _quadrature, _kramers, _operators, _intbyparts, _equilibrium, _short_run]


def run_selftest(seed: int = 0, quick: bool = False) -> List[Result]:
    rng = np.random.default_rng(seed)
    out = []
    checks = CHECKS[:5] if quick else CHECKS
    for chk in checks:
        t0 = time.perf_counter()
        try:
            name, ok, detail = chk(rng)
        except Exception as exc:  # report, keep going
            name, ok, detail = chk.__name__.strip("_"), False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), f"{detail} ({time.perf_counter() - t0:.2f}s)"))
    return out
