import numpy as np
import pytest
from hypothesis import given, strategies as st

from fenepoly import ChainParams, ModelParams, OmegaGrid, assemble_operators, build_config_grid
from fenepoly.solvers import (KroneckerSolver, LinearSystem, SolverError, continuity_matrix, continuity_substep,
                              fokker_planck_solve, momentum_matrix, momentum_rhs, momentum_solve,
                              project_initial_density, project_initial_velocity, smooth_initial_psi,
                              varrho_residual)
from fenepoly.regularization import cutoff_beta
from fenepoly.stress import polymer_stress

from oracles import dense_continuity, rel_err

N_INSTANCES = 20


@pytest.mark.parametrize("bc", ["periodic", "noslip"])
def test_continuity_dense_oracle(bc, chain, cfg8, rng):
    om = OmegaGrid(4, 4, bc=bc)
    ops = assemble_operators(om, cfg8, chain)
    worst = 0.0
    for _ in range(N_INSTANCES):
        p = ModelParams(dt=rng.uniform(0.01, 0.2), alpha=rng.uniform(0, 0.1))
        u = rng.standard_normal(om.n_vel) * ops.free
        rho0 = rng.uniform(0.5, 2.0, om.ncell)
        slab = continuity_substep(rho0, u, p, 3, ops)
        A = dense_continuity(om, u, p.alpha, p.dt / 3)
        assert np.allclose(continuity_matrix(u, p.alpha, p.dt / 3, ops).toarray(), A, atol=1e-13)
        r = rho0
        for s in range(3):
            r = np.linalg.solve(A, om.vol * r)
            worst = max(worst, rel_err(slab.rho[s + 1], r))
    assert worst <= 1e-10


@pytest.mark.parametrize("bc", ["periodic", "noslip"])
def test_momentum_dense_oracle(bc, chain, cfg8, params, rng):
    om = OmegaGrid(4, 4, bc=bc)
    ops = assemble_operators(om, cfg8, chain, params)
    free = ops.free
    for _ in range(N_INSTANCES):
        rho_n = rng.uniform(0.5, 2, om.ncell)
        rho_p = rng.uniform(0.5, 2, om.ncell)
        u_p = rng.standard_normal(om.n_vel) * free
        slab = continuity_substep(rho_p, u_p, params, 2, ops)
        psi = 1 + 0.3 * rng.random((om.ncell, cfg8.nq))
        tau1 = polymer_stress(psi, cfg8, ops, params.k_temp)
        f = rng.standard_normal(om.n_vel) * free
        vr = psi @ cfg8.W
        u = momentum_solve(rho_n, rho_p, u_p, slab, tau1, f, params, ops, vr, vr, u_p)
        A = momentum_matrix(rho_n, rho_p, u_p, params, ops).toarray()[np.ix_(free, free)]
        b = momentum_rhs(rho_n, rho_p, u_p, slab.p_bar, tau1, f, params, ops, vr, vr, u_p)[free]
        ref = np.linalg.solve(A, b)
        assert rel_err(u[free], ref) <= 1e-10
        assert np.all(u[~free] == 0)


def test_momentum_matrix_skew_part_and_coercivity(ops4, params, rng):
    om = ops4.omega
    free = ops4.free
    rho = rng.uniform(0.5, 2, om.ncell)
    u_p = rng.standard_normal(om.n_vel) * free
    A = momentum_matrix(rho, rho, u_p, params, ops4).toarray()[np.ix_(free, free)]
    S = 0.5 * (A + A.T)
    rf = (ops4.cell_to_face @ rho)[free]
    # the convection part only contributes to the antisymmetric part
    S0 = momentum_matrix(rho, rho, 0 * u_p, params, ops4).toarray()[np.ix_(free, free)]
    assert np.allclose(S, S0, atol=1e-13)
    assert np.linalg.eigvalsh(S).min() >= ops4.V * rf.min() * (1 - 1e-12)


@pytest.mark.parametrize("bc", ["periodic", "noslip"])
def test_fokker_planck_dense_oracle(bc, chain, cfg8, params, rng):
    om = OmegaGrid(4, 4, bc=bc)
    ops = assemble_operators(om, cfg8, chain, params)
    solver = KroneckerSolver(ops)
    a, b = params.dt * params.eps, params.dt * ops.q_coeff
    A = KroneckerSolver.matrix(ops, a, b).toarray()
    for _ in range(N_INSTANCES):
        psi_p = rng.uniform(0.2, 3.0, (om.ncell, cfg8.nq))
        lag = rng.uniform(0.2, 3.0, (om.ncell, cfg8.nq))
        u = rng.standard_normal(om.n_vel) * ops.free
        from fenepoly.solvers import fp_load
        B = fp_load(psi_p, lag, u, params, ops)
        ref = np.linalg.solve(A, B.ravel()).reshape(B.shape)
        got = fokker_planck_solve(psi_p, u, params, ops, psi_lag=lag, solver=solver)
        assert rel_err(got, ref) <= 1e-10
        kry = fokker_planck_solve(psi_p, u, params, ops, psi_lag=lag, method="krylov")
        assert rel_err(kry, ref) <= 1e-10


@pytest.mark.parametrize("bc", ["periodic", "noslip"])
def test_initial_projection_dense_oracles(bc, chain, cfg8, rng):
    om = OmegaGrid(4, 4, bc=bc)
    ops = assemble_operators(om, cfg8, chain)
    Sx = ops.stiff_x.toarray()
    free = ops.free
    for _ in range(N_INSTANCES):
        alpha, dt, L = rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.2), rng.uniform(2, 10)
        rho0 = rng.uniform(0.1, 3, om.ncell)
        rho = project_initial_density(rho0, alpha, ops)
        ref = np.linalg.solve(om.vol * np.eye(om.ncell) + alpha * Sx, om.vol * rho0)
        assert rel_err(rho, ref) <= 1e-10
        u0 = rng.standard_normal(om.n_vel) * free
        u = project_initial_velocity(u0, rho, dt, ops)
        M = np.diag(om.vol * (ops.cell_to_face @ rho))
        A = (M + dt * ops.vec_laplace_form.toarray())[np.ix_(free, free)]
        assert rel_err(u[free], np.linalg.solve(A, (M @ u0)[free])) <= 1e-10
        psi0 = rng.uniform(0, 2 * L, (om.ncell, cfg8.nq))
        psi = smooth_initial_psi(psi0, L, dt, ops)
        Ak = KroneckerSolver.matrix(ops, dt, dt).toarray()
        B = om.vol * cutoff_beta(psi0, L) * cfg8.W[None, :]
        assert rel_err(psi, np.linalg.solve(Ak, B.ravel()).reshape(B.shape)) <= 1e-10


def test_initial_projections_are_stable(ops4, rng):
    """Projections do not increase mass, kinetic energy or the cut-off datum bound."""
    om, cfg = ops4.omega, ops4.cfg
    rho0 = rng.uniform(0.1, 3, om.ncell)
    rho = project_initial_density(rho0, 0.2, ops4)
    assert abs(rho.sum() - rho0.sum()) <= 1e-12 * rho0.sum()
    assert rho.min() >= rho0.min() - 1e-12 and rho.max() <= rho0.max() + 1e-12
    u0 = rng.standard_normal(om.n_vel) * ops4.free
    u = project_initial_velocity(u0, rho, 0.1, ops4)
    rf = ops4.cell_to_face @ rho
    assert np.sum(rf * u * u) <= np.sum(rf * u0 * u0) * (1 + 1e-12)
    psi0 = rng.uniform(0, 6, (om.ncell, cfg.nq))
    psi = smooth_initial_psi(psi0, 4.0, 0.1, ops4)
    assert psi.min() >= -1e-12 and psi.max() <= 4.0 + 1e-12
    assert abs(np.sum(psi @ cfg.W) - np.sum(np.minimum(psi0, 4.0) @ cfg.W)) <= 1e-11
    with pytest.raises(ValueError):
        project_initial_density(-rho0, 0.1, ops4)
    with pytest.raises(SolverError):
        project_initial_velocity(u0, 0 * rho, 0.1, ops4)


@given(st.integers(0, 2 ** 31), st.sampled_from(["periodic", "noslip"]))
def test_continuity_positivity_and_mass(seed, bc):
    rng = np.random.default_rng(seed)
    ch = ChainParams(b=(4.0,))
    om = OmegaGrid(5, 4, bc=bc)
    ops = assemble_operators(om, build_config_grid(ch, 4, 8), ch)
    u = 3 * rng.standard_normal(om.n_vel) * ops.free
    p = ModelParams(dt=rng.uniform(0.001, 0.5), alpha=rng.uniform(0, 0.2))
    rho0 = rng.uniform(0, 2, om.ncell)
    assert LinearSystem(continuity_matrix(u, p.alpha, p.dt, ops), rho0).is_m_matrix()
    slab = continuity_substep(rho0, u, p, 4, ops)
    for r in slab.rho:
        assert r.min() >= -1e-14 * rho0.max()
        assert abs(r.sum() - rho0.sum()) <= 1e-12 * max(rho0.sum(), 1e-300)


@given(st.integers(0, 2 ** 31))
def test_fokker_planck_mass_and_equilibrium(seed):
    rng = np.random.default_rng(seed)
    ch = ChainParams(b=(4.0,))
    cfg = build_config_grid(ch, 4, 8)
    om = OmegaGrid(4, 4)
    p = ModelParams(dt=0.05, eps=0.1, L_cut=5.0)
    ops = assemble_operators(om, cfg, ch, p)
    u = rng.standard_normal(om.n_vel)
    psi_p = rng.uniform(0.1, 3, (om.ncell, cfg.nq))
    psi = fokker_planck_solve(psi_p, u, p, ops)
    assert abs(np.sum(psi @ cfg.W) - np.sum(psi_p @ cfg.W)) <= 1e-12 * np.sum(psi_p @ cfg.W)
    one = np.ones((om.ncell, cfg.nq))
    assert np.abs(fokker_planck_solve(one, 0 * u, p, ops) - 1).max() <= 1e-13
    assert np.abs(varrho_residual(psi, psi_p, psi_p, u, p, ops)).max() <= 1e-12


def test_linear_system_variants(rng):
    import scipy.sparse as sp
    A = sp.random(30, 30, density=0.2, random_state=3) + 10 * sp.identity(30)
    b = rng.standard_normal(30)
    x = LinearSystem(A, b).solve()
    y = LinearSystem(A, b, method="krylov").solve()
    S = A @ A.T
    z = LinearSystem(S, b, method="krylov", symmetric=True, rel_tol=1e-12).solve()
    ref = np.linalg.solve(A.toarray(), b)
    assert rel_err(x, ref) <= 1e-12 and rel_err(y, ref) <= 1e-8
    assert rel_err(z, np.linalg.solve(S.toarray(), b)) <= 1e-9
    assert np.all(LinearSystem(A, np.zeros(30)).solve() == 0)
    with pytest.raises(SolverError):
        LinearSystem(A, b, method="krylov", max_iter=1, rel_tol=1e-15).solve()
