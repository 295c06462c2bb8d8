"""Config-driven runs: problem construction, the step loop, outputs and re-verification."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import Config, serialize_config, load_config
from .discretization import OmegaGrid, build_config_grid
from .output import (DiagnosticsWriter, diagnostics_row, read_diagnostics, read_field_dump,
                     write_field_dump)
from .scheme import (Controls, PicardDiverged, Problem, State, conservation_report, energy_ledger,
                     initial_report, initial_state, picard_step)
from .solvers import slab_from_substeps


def _cell_sampler(values: np.ndarray, omega: OmegaGrid) -> Callable:
    """Piecewise-bilinear interpolation of cell-centred values (periodic wrap or clamped)."""
    vals = np.asarray(values, float)

    def sample(X, Y):
        fx = np.asarray(X) / omega.hx - 0.5
        fy = np.asarray(Y) / omega.hy - 0.5
        i0, j0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
        ax, ay = fx - i0, fy - j0

        def idx(i, n):
            return i % n if omega.periodic else np.clip(i, 0, n - 1)

        i1, j1 = idx(i0 + 1, omega.nx), idx(j0 + 1, omega.ny)
        i0, j0 = idx(i0, omega.nx), idx(j0, omega.ny)
        return ((1 - ax) * (1 - ay) * vals[i0, j0] + ax * (1 - ay) * vals[i1, j0]
                + (1 - ax) * ay * vals[i0, j1] + ax * ay * vals[i1, j1])

    return sample


def build_forcing(config: Config, omega: OmegaGrid) -> Optional[Callable]:
    f = config.forcing
    if f.kind == "none":
        return None
    if f.kind == "const":
        fx, fy = (float(v) for v in f.value)
        return lambda x, y, t: (np.full_like(x, fx, dtype=float), np.full_like(y, fy, dtype=float))
    if f.kind == "lid":
        ly, amp, w = omega.ly, f.amplitude, f.width
        return lambda x, y, t: (amp * np.exp(-((ly - y) / w) ** 2), np.zeros_like(y, dtype=float))
    table = np.asarray(f.table, float)
    sx, sy = _cell_sampler(table[..., 0], omega), _cell_sampler(table[..., 1], omega)
    return lambda x, y, t: (sx(x, y), sy(x, y))


def build_problem(config: Config) -> Problem:
    g, t = config.grid, config.time
    chain = config.chain_params()
    params = config.model_params()
    omega = OmegaGrid(g.nx, g.ny, g.lx, g.ly, g.bc)
    cfg = build_config_grid(chain, g.nq_r, g.nq_theta)
    controls = Controls(max_iter=t.picard_max, tol=t.picard_tol, damping=t.picard_damping,
                        m_sub=t.m_sub, C0_LT=config.regularization.C0_LT)
    return Problem(omega, cfg, chain, params, controls, forcing=build_forcing(config, omega))


def psi_perturbation(config: Config, problem: Problem) -> np.ndarray:
    """Raw ψ̂₀ samples on cells × q-nodes."""
    om, cfg = problem.omega, problem.cfg
    p0 = config.init.psi0
    if p0.kind == "equilibrium":
        return np.ones((om.ncell, cfg.nq))
    X, Y = om.centers()
    xmode = np.cos(2 * np.pi * (p0.kx * X / om.lx + p0.ky * Y / om.ly)).ravel()
    q = cfg.q[:, 0, :]
    g = q[:, 0] * q[:, 1] if p0.q_mode == "xy" else 0.5 * (q[:, 0] ** 2 - q[:, 1] ** 2)
    return 1.0 + p0.amplitude * xmode[:, None] * g[None, :]


def build_initial_state(config: Config, problem: Problem) -> State:
    om = problem.omega
    ini = config.init
    rho0 = np.asarray(ini.rho0, float).ravel() if isinstance(ini.rho0, tuple) else float(ini.rho0)
    (xu, _), (xv, _) = om.face_coords()
    u0 = om.join_velocity(np.full(xu.shape, float(ini.u0[0])), np.full(xv.shape, float(ini.u0[1])))
    return initial_state(problem, rho0, u0, psi_perturbation(config, problem))


def _dump(state: State, run_dir: Path, problem: Problem, name: Optional[str] = None):
    extra = {}
    if state.slab is not None:
        extra["rho_slab"] = np.stack([r.reshape(problem.omega.nx, problem.omega.ny) for r in state.slab.rho])
    f = state.f_face if state.f_face is not None else np.zeros(problem.omega.n_vel)
    fx, fy = problem.omega.split_velocity(f)
    extra["fx"], extra["fy"] = fx, fy
    write_field_dump(state, run_dir / "dumps" / (name or f"step_{state.step:06d}"), problem.omega, problem.cfg,
                     extra_fields=extra)


def run_config(config: Config, out_dir=None, progress: Optional[Callable] = None) -> Path:
    """Execute a run; writes config.yaml, diagnostics.csv, summary.json and optional dumps."""
    run_dir = Path(out_dir) if out_dir is not None else Path(config.output.prefix)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(serialize_config(config), encoding="utf-8")
    problem = build_problem(config)
    state0 = build_initial_state(config, problem)
    out = config.output
    every = out.every if out.every > 0 else config.time.N
    n_pass, n_steps, error = 0, 0, None
    state = state0
    with DiagnosticsWriter(run_dir / "diagnostics.csv") as diag:
        diag.write(diagnostics_row(initial_report(state0, problem), conservation_report(state0, state0, problem), 0))
        if out.dump_fields:
            _dump(state0, run_dir, problem)
        for _ in range(config.time.N):
            try:
                new = picard_step(state, problem)
            except PicardDiverged as exc:
                _dump(state, run_dir, problem, "last_valid")
                error = {"type": "PicardDiverged", "step": exc.step, "residual_history": exc.residual_history}
                break
            rep = energy_ledger(new, state, problem)
            cons = conservation_report(new, state0, problem)
            diag.write(diagnostics_row(rep, cons, new.picard_iters))
            n_steps += 1
            n_pass += bool(rep.passed)
            if out.dump_fields and (new.step % every == 0 or new.step == config.time.N):
                _dump(new, run_dir, problem)
            if progress is not None:
                progress(new, rep)
            state = new
    summary = {"steps": n_steps, "requested_steps": config.time.N, "completed": error is None,
               "pass_fraction": n_pass / n_steps if n_steps else 1.0, "final_t": state.t, "error": error}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    if error is not None:
        raise PicardDiverged(f"run aborted at step {error['step']}", error["residual_history"], error["step"])
    return run_dir


def _load_state(step_dir: Path, problem: Problem) -> State:
    om = problem.omega
    rho, meta = read_field_dump(step_dir, "rho")
    ux, _ = read_field_dump(step_dir, "ux")
    uy, _ = read_field_dump(step_dir, "uy")
    psi, _ = read_field_dump(step_dir, "psi")
    fx, _ = read_field_dump(step_dir, "fx")
    fy, _ = read_field_dump(step_dir, "fy")
    slab = None
    if (step_dir / "rho_slab.json").exists():
        rs, _ = read_field_dump(step_dir, "rho_slab")
        slab = slab_from_substeps([r.ravel() for r in rs], problem.params, problem.ops)
    return State(meta["t"], meta["step"], rho.ravel(), om.join_velocity(ux, uy), psi.reshape(om.ncell, -1),
                 f_face=om.join_velocity(fx, fy), slab=slab)


def check_energy(run_dir, rtol: float = 1e-9) -> dict:
    """Recompute the energy reports of consecutive dumped steps and compare with diagnostics.csv."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    problem = build_problem(config)
    rows = {r["step"]: r for r in read_diagnostics(run_dir / "diagnostics.csv")}
    dumps = sorted(p for p in (run_dir / "dumps").glob("step_*") if p.is_dir()) if (run_dir / "dumps").exists() else []
    states = {int(p.name.split("_")[1]): p for p in dumps}
    checked, mismatches = 0, []
    for step in sorted(states):
        if step - 1 not in states or step not in rows:
            continue
        prev = _load_state(states[step - 1], problem)
        new = _load_state(states[step], problem)
        rep = energy_ledger(new, prev, problem)
        row = rows[step]
        for key in ("kinetic", "internal", "entropy", "interaction", "dissipation", "work", "total", "residual"):
            a, b = getattr(rep, key), row[key]
            scale = max(1.0, abs(rep.total))
            if not (math.isfinite(a) and abs(a - b) <= rtol * scale):
                mismatches.append({"step": step, "term": key, "recomputed": a, "recorded": b})
        if int(rep.passed) != row["pass"]:
            mismatches.append({"step": step, "term": "pass", "recomputed": int(rep.passed), "recorded": row["pass"]})
        checked += 1
    n = len([r for s, r in rows.items() if s > 0])
    pass_fraction = sum(r["pass"] for s, r in rows.items() if s > 0) / n if n else 1.0
    return {"steps_checked": checked, "mismatches": mismatches, "pass_fraction": pass_fraction,
            "ok": checked > 0 and not mismatches}
