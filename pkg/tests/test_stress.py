import numpy as np
import pytest
from hypothesis import given, strategies as st

from fenepoly import ChainParams, ModelParams, OmegaGrid, assemble_operators, build_config_grid
from fenepoly.discretization import drag_weak
from fenepoly.stress import (extra_stress, interaction_load, kramers_tensor, number_density, polymer_stress,
                             stress_divergence_weak, stress_load)


def test_number_density_of_one(cfg16):
    assert number_density(np.ones(cfg16.nq), cfg16) == pytest.approx(1.0, abs=1e-12)
    vr = number_density(np.full((3, cfg16.nq), 2.0), cfg16)
    assert vr.shape == (3,) and np.allclose(vr, 2.0)


@pytest.mark.parametrize("n, tol", [(32, 5e-4), (64, 1.3e-4)])
def test_equilibrium_kramers_and_stress(chain, n, tol):
    cfg = build_config_grid(chain, n, n)
    p = ModelParams(k_temp=1.3, z_int=0.2)
    s = extra_stress(np.ones(cfg.nq), cfg, p)
    assert np.abs(s.C[0] - np.eye(2)).max() <= tol
    assert np.abs(s.tau + (1.3 + 0.2) * np.eye(2)).max() <= 1.3 * tol


def test_two_spring_equilibrium_stress():
    ch = ChainParams(K=2, b=(4.0, 6.0))
    cfg = build_config_grid(ch, 16, 16)
    s = extra_stress(np.ones(cfg.nq), cfg, ModelParams(k_temp=1.0), z=0.0)
    assert np.abs(s.C - np.eye(2)[None]).max() <= 3e-3
    assert np.abs(s.tau + np.eye(2)).max() <= 6e-3


def test_cell_kramers_is_exactly_identity_at_equilibrium(cfg16):
    C = kramers_tensor(np.ones(cfg16.nq), cfg16, method="cell")
    assert np.abs(C - np.eye(2)).max() <= 1e-13
    with pytest.raises(ValueError):
        kramers_tensor(np.ones(cfg16.nq), cfg16, method="bogus")


def test_cell_and_nodal_kramers_agree_to_second_order(chain):
    errs = []
    for n in (8, 16, 32):
        cfg = build_config_grid(chain, n, n)
        q = cfg.q[:, 0, :]
        psi = 1 + 0.5 * q[:, 0] * q[:, 1] / 2
        errs.append(np.abs(kramers_tensor(psi, cfg, method="cell") - kramers_tensor(psi, cfg)).max())
    assert errs[2] < errs[1] < errs[0] and errs[1] / errs[2] > 3.0


def test_kramers_identity_via_drag(ops4, rng):
    """C_cell(ψ):σ = ∫M∇ψ̂·σq + ϱ trσ, the left side computed from drag fluxes."""
    cfg = ops4.cfg
    psi = 1 + 0.3 * rng.standard_normal((ops4.omega.ncell, cfg.nq))
    sigma = rng.standard_normal((ops4.omega.ncell, 4))
    C = kramers_tensor(psi, cfg, method="cell", ops=ops4)
    lhs = np.einsum("cab,cab->c", C, sigma.reshape(-1, 2, 2))
    drag = drag_weak(ops4, sigma, 1.0, 1.0, psi)
    rhs = drag + number_density(psi, cfg) * (sigma[:, 0] + sigma[:, 3])
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_stress_load_constant_tau_is_zero(ops4, rng):
    tau = np.broadcast_to(rng.standard_normal((2, 2)), (ops4.omega.ncell, 2, 2))
    assert np.abs(stress_load(tau, ops4)).max() <= 1e-12


def test_stress_load_dense_oracle(ops4, rng):
    """b·w = −V Σ_c τ_c : (∇w)_c checked column by column."""
    om = ops4.omega
    tau = rng.standard_normal((om.ncell, 2, 2))
    b = stress_load(tau, ops4)
    G = ops4.cell_grad.toarray().reshape(4, om.ncell, om.n_vel)
    dense = np.array([-ops4.V * np.sum(tau.reshape(-1, 4).T * G[:, :, k]) for k in range(om.n_vel)])
    assert np.allclose(b, dense, atol=1e-13)


def test_interaction_load_matches_weak_form(ops4, rng):
    om = ops4.omega
    vr = 1 + 0.2 * rng.standard_normal(om.ncell)
    w = rng.standard_normal(om.n_vel) * ops4.free
    u = rng.standard_normal(om.n_vel)
    val = stress_divergence_weak(np.zeros((om.ncell, 2, 2)), w, ops4, vr, vr, u, z=0.3)
    # face loop: −2𝔷 Σ_f V ϱ_up (ϱ_R − ϱ_L)/h w_f
    L, R = ops4._face_neighbours
    up = np.where(u > 0, vr[L], np.where(u < 0, vr[R], 0.5 * (vr[L] + vr[R])))
    h = np.r_[np.full(om.n_ux, om.hx), np.full(om.n_vel - om.n_ux, om.hy)]
    ref = -0.6 * ops4.V * np.sum(up * (vr[R] - vr[L]) / h * w * ops4.free)
    assert val == pytest.approx(ref, rel=1e-12, abs=1e-14)
    assert np.abs(interaction_load(np.ones(om.ncell), np.ones(om.ncell), u, ops4, 0.3)).max() == 0.0


@given(st.floats(0.1, 3.0), st.floats(0.0, 1.0))
def test_equilibrium_stress_scales_with_density(c, z):
    cfg = build_config_grid(ChainParams(b=(4.0,)), 16, 16)
    s = extra_stress(np.full(cfg.nq, c), cfg, ModelParams(k_temp=1.0, z_int=max(z, 1e-3)), method="cell")
    zz = max(z, 1e-3)
    assert np.allclose(s.tau, -(c + zz * c * c) * np.eye(2), atol=1e-12)


def test_polymer_stress_equals_k_part(ops4, rng):
    cfg = ops4.cfg
    psi = 1 + 0.2 * rng.random((ops4.omega.ncell, cfg.nq))
    t1 = polymer_stress(psi, cfg, ops4, 0.7)
    s = extra_stress(psi, cfg, ModelParams(k_temp=0.7), method="cell", ops=ops4, z=0.0)
    assert np.allclose(t1, s.tau, atol=1e-14)
