"""Grids on the physical box and on the configuration disc, and the discrete operators.

Physical space uses cell-centred scalars (ρ, ψ̂, ϱ) and a staggered velocity:
u_x lives on vertical faces, u_y on horizontal faces. Shear derivatives live on
cell corners. All operators are scipy.sparse matrices acting on flattened
arrays in row-major (x, y) order; velocity vectors are ``concat(ux, uy)``.

Configuration space (K=1, d=2) uses polar cells. Radial nodes are Gauss-Jacobi
nodes in s = |q|^2/b for the weight (1-s)^{b/2}, which is exactly the FENE
Maxwellian. Shell boundaries are placed where the cumulative Maxwellian mass
matches the cumulative quadrature weight, so each weight is the exact
Maxwellian mass of its cell. Angular nodes sit at sector midpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .model_core import ChainParams, ModelParams


class QuadratureNotConverged(RuntimeError):
    pass


class AssemblyError(ValueError):
    pass


PERIODIC = "periodic"
NOSLIP = "noslip"


def _normalize_bc(bc: str) -> str:
    key = bc.lower().replace("_", "").replace("-", "")
    if key in ("periodic",):
        return PERIODIC
    if key in ("noslip", "noslipneumann", "wall"):
        return NOSLIP
    raise ValueError(f"unknown boundary condition {bc!r}")


# ---------------------------------------------------------------------------
# physical grid


@dataclass(frozen=True)
class OmegaGrid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc: str = PERIODIC

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx, ny >= 4")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("box lengths must be positive")
        object.__setattr__(self, "bc", _normalize_bc(self.bc))

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h(self):
        return (self.hx, self.hy)

    @property
    def vol(self) -> float:
        return self.hx * self.hy

    @property
    def ncell(self) -> int:
        return self.nx * self.ny

    @property
    def weights(self) -> np.ndarray:
        """Cell volumes; their sum is lx*ly up to rounding of the products."""
        return np.full(self.ncell, self.vol)

    def centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # staggered velocity layout
    @property
    def ux_shape(self):
        return (self.nx, self.ny) if self.periodic else (self.nx + 1, self.ny)

    @property
    def uy_shape(self):
        return (self.nx, self.ny) if self.periodic else (self.nx, self.ny + 1)

    @property
    def n_ux(self) -> int:
        return int(np.prod(self.ux_shape))

    @property
    def n_vel(self) -> int:
        return self.n_ux + int(np.prod(self.uy_shape))

    @property
    def corner_shape(self):
        return (self.nx, self.ny) if self.periodic else (self.nx + 1, self.ny + 1)

    def face_coords(self):
        """Coordinates of the u_x and u_y nodes, each as (X, Y) arrays."""
        nxu, nyu = self.ux_shape
        xu = np.arange(nxu) * self.hx
        yu = (np.arange(nyu) + 0.5) * self.hy
        nxv, nyv = self.uy_shape
        xv = (np.arange(nxv) + 0.5) * self.hx
        yv = np.arange(nyv) * self.hy
        return np.meshgrid(xu, yu, indexing="ij"), np.meshgrid(xv, yv, indexing="ij")

    def free_velocity_mask(self) -> np.ndarray:
        """False on wall-normal faces, where the velocity is pinned to zero."""
        mx = np.ones(self.ux_shape, bool)
        my = np.ones(self.uy_shape, bool)
        if not self.periodic:
            mx[0, :] = mx[-1, :] = False
            my[:, 0] = my[:, -1] = False
        return np.concatenate([mx.ravel(), my.ravel()])

    def split_velocity(self, u: np.ndarray):
        return u[: self.n_ux].reshape(self.ux_shape), u[self.n_ux:].reshape(self.uy_shape)

    def join_velocity(self, ux, uy) -> np.ndarray:
        return np.concatenate([np.asarray(ux, float).ravel(), np.asarray(uy, float).ravel()])

    def spec(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly, "bc": self.bc}


def build_omega_grid(config) -> OmegaGrid:
    """OmegaGrid from a mapping or any object with nx, ny, lx, ly, bc attributes."""
    get = config.get if isinstance(config, dict) else (lambda k, d=None: getattr(config, k, d))
    return OmegaGrid(int(get("nx")), int(get("ny")), float(get("lx", 1.0)), float(get("ly", 1.0)),
                     get("bc", PERIODIC))


# ---------------------------------------------------------------------------
# configuration grid


@dataclass(frozen=True)
class SpringGrid:
    """Polar grid on one disc B(0, sqrt(b))."""

    b: float
    n_r: int
    n_theta: int
    s: np.ndarray            # radial nodes in s = r^2/b
    s_face: np.ndarray       # shell boundaries, s_face[0] = 0, s_face[-1] = 1
    w_rad: np.ndarray        # normalized Maxwellian mass of each shell (sums to 1)
    m_face: np.ndarray       # normalized Maxwellian density at shell boundaries
    z_grid: float            # partition function from the cell integrals
    theta: np.ndarray        # angular nodes (sector midpoints)

    @property
    def r(self):
        return np.sqrt(self.b * self.s)

    @property
    def r_face(self):
        return np.sqrt(self.b * self.s_face)

    @property
    def dtheta(self):
        return 2.0 * math.pi / self.n_theta

    @property
    def nq(self):
        return self.n_r * self.n_theta

    def nodes(self) -> np.ndarray:
        R, T = np.meshgrid(self.r, self.theta, indexing="ij")
        return np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)

    def weights(self) -> np.ndarray:
        return np.repeat(self.w_rad / self.n_theta, self.n_theta)

    def sector_integrals(self):
        """∫cos², ∫sin·cos, ∫sin² over each angular sector."""
        a = self.theta - 0.5 * self.dtheta
        c = self.theta + 0.5 * self.dtheta
        half = 0.5 * self.dtheta
        d2s = (np.sin(2 * c) - np.sin(2 * a)) / 4.0
        d2c = (np.cos(2 * c) - np.cos(2 * a)) / 4.0
        return half + d2s, -d2c, half - d2s

    def cell_tensors(self) -> np.ndarray:
        """Exact cell integrals ∫_cell M U' q qᵀ dq, shape (nq, 2, 2).

        Uses M U'(|q|²/2) r = -dM/dr, so the radial factor is
        2·w_cell/Δθ - [r² M] over the shell.
        """
        rf2m = self.r_face ** 2 * self.m_face
        radial = 2.0 * (self.w_rad / self.n_theta) / self.dtheta - (rf2m[1:] - rf2m[:-1])
        icc, isc, iss = self.sector_integrals()
        ang = np.stack([np.stack([icc, isc], -1), np.stack([isc, iss], -1)], -2)
        return (radial[:, None, None, None] * ang[None]).reshape(-1, 2, 2)


def _spring_grid(b: float, n_r: int, n_theta: int, z_ref: float) -> SpringGrid:
    theta_exp = b / 2.0
    x, w = roots_jacobi(n_r, theta_exp, 0.0)
    s = 0.5 * (1.0 + x)
    w = w / 2.0 ** (theta_exp + 1.0)          # weights for ∫_0^1 (1-s)^θ g(s) ds
    # raw cell masses of exp(-U) over full shells: (b/2)·2π·w_k
    raw = math.pi * b * w
    z_grid = float(np.sum(raw))
    defect = abs(z_grid / z_ref - 1.0)
    if defect > 1e-4:
        raise QuadratureNotConverged(f"Maxwellian normalization defect {defect:.3e} exceeds 1e-4")
    w_rad = raw / z_grid
    cum = np.concatenate([[0.0], np.cumsum(w_rad)])
    cum[-1] = 1.0
    s_face = 1.0 - np.clip(1.0 - cum, 0.0, 1.0) ** (1.0 / (theta_exp + 1.0))
    s_face[0], s_face[-1] = 0.0, 1.0
    m_face = (1.0 - s_face) ** theta_exp / z_grid
    if not np.all((s_face[:-1] < s) & (s < s_face[1:])):
        raise QuadratureNotConverged("quadrature nodes do not interlace the shell boundaries")
    theta = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
    return SpringGrid(b, n_r, n_theta, s, s_face, w_rad, m_face, z_grid, theta)


@dataclass(frozen=True)
class ConfigGrid:
    """Maxwellian-weighted grid on D; a tensor product of per-spring polar grids."""

    chain: ChainParams
    n_r: int
    n_theta: int
    springs: tuple
    q: np.ndarray          # (nq, K, 2)
    W: np.ndarray          # (nq,), sums to 1
    Uprime: np.ndarray     # (nq, K), U_i'(|q_i|²/2) at the nodes
    z_grid: tuple          # partition functions from the grid before renormalization
    weight_defect: float

    @property
    def K(self):
        return self.chain.K

    @property
    def nq(self):
        return self.W.size

    @property
    def shape(self):
        return (self.n_r, self.n_theta) * self.K

    def spec(self) -> dict:
        return {"K": self.K, "b": list(self.chain.b), "nq_r": self.n_r, "nq_theta": self.n_theta}


def build_config_grid(chain: ChainParams, n_r: int, n_theta: int) -> ConfigGrid:
    if chain.d != 2:
        raise ValueError("configuration grids are built for d = 2")
    if n_r < 4:
        raise ValueError("n_r must be >= 4")
    if n_theta < 8 or n_theta % 2:
        raise ValueError("n_theta must be even and >= 8")
    springs = tuple(_spring_grid(chain.b[i], n_r, n_theta, chain.Z[i]) for i in range(chain.K))
    nodes = [sg.nodes() for sg in springs]
    weights = [sg.weights() for sg in springs]
    defect = max(abs(sg.z_grid / chain.Z[i] - 1.0) for i, sg in enumerate(springs))
    if chain.K == 1:
        q = nodes[0][:, None, :]
        W = weights[0]
    else:
        grids = np.meshgrid(*[np.arange(len(w)) for w in weights], indexing="ij")
        idx = [g.ravel() for g in grids]
        q = np.stack([nodes[i][idx[i]] for i in range(chain.K)], axis=1)
        W = np.prod([weights[i][idx[i]] for i in range(chain.K)], axis=0)
    W = W / np.sum(W)
    r2 = np.sum(q * q, axis=-1)
    b = np.asarray(chain.b)
    Uprime = 1.0 / (1.0 - r2 / b[None, :])
    return ConfigGrid(chain, n_r, n_theta, springs, q, W, Uprime,
                      tuple(sg.z_grid for sg in springs), float(defect))


def weighted_inner_product(phi1, phi2, omega: Optional[OmegaGrid] = None,
                           cfg: Optional[ConfigGrid] = None) -> float:
    """Discrete L²_M inner product.

    Shapes: (ncell, nq) on Ω×D, (nq,) on D, (ncell,) on Ω.
    """
    a = np.asarray(phi1, float)
    b = np.asarray(phi2, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if omega is not None and cfg is not None:
        a = a.reshape(omega.ncell, cfg.nq)
        b = b.reshape(omega.ncell, cfg.nq)
        return float(omega.vol * np.sum((a * b) @ cfg.W))
    if cfg is not None:
        a = a.reshape(cfg.nq)
        return float(np.dot(cfg.W, a * b.reshape(cfg.nq)))
    if omega is not None:
        return float(omega.vol * np.sum(a * b))
    raise ValueError("need at least one grid")


# ---------------------------------------------------------------------------
# operator assembly


def _coo(rows, cols, vals, shape):
    return sp.csr_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))), shape=shape)


@dataclass
class DiscreteOperators:
    """Sparse operators on the physical grid and on the configuration grid."""

    omega: OmegaGrid
    cfg: ConfigGrid
    grad_x: sp.csr_matrix          # cells -> velocity faces
    div_x: sp.csr_matrix           # velocity faces -> cells, equal to -grad_xᵀ
    stiff_x: sp.csr_matrix         # ∫∇φ·∇η on cells (Neumann)
    laplace_x: sp.csr_matrix       # Neumann Laplacian on cells
    dxx: sp.csr_matrix             # ∂x ux at cells
    dyy: sp.csr_matrix             # ∂y uy at cells
    cyx: sp.csr_matrix             # ∂y ux at corners
    cxy: sp.csr_matrix             # ∂x uy at corners
    corner_vol: np.ndarray
    corner_to_cell: sp.csr_matrix  # average of the four corners of a cell
    cell_grad: sp.csr_matrix       # (4·ncell) x n_vel, components (11, 12, 21, 22) of ∇u
    cell_to_face: sp.csr_matrix    # face average of a cell field
    face_dx: sp.csr_matrix         # ∂x of each velocity component at its own faces
    face_dy: sp.csr_matrix
    vel_avg_x: sp.csr_matrix       # u_x interpolated to every velocity face
    vel_avg_y: sp.csr_matrix
    face_axis: np.ndarray          # 0 for x-faces, 1 for y-faces
    free: np.ndarray               # free velocity dofs
    strain_form: sp.csr_matrix     # ∫ D(u):D(w)
    divdiv_form: sp.csr_matrix     # ∫ div u div w
    vec_laplace_form: sp.csr_matrix  # ∫ ∇u:∇w
    stiff_q: Optional[sp.csr_matrix] = None   # ∫ M ∇_q φ·∇_q η (K = 1)
    q_coeff: float = 0.0           # Σ A_ij/(4λ) multiplying stiff_q
    eps: float = 0.0
    cell_T: Optional[np.ndarray] = None       # exact ∫_cell M U' q qᵀ, (nq, 2, 2)
    drag_geom: Optional[dict] = None

    # convenience ------------------------------------------------------
    @property
    def V(self) -> float:
        return self.omega.vol

    def fp_q_operator(self) -> sp.csr_matrix:
        """M-weighted q-diffusion (1/4λ)ΣA_ij ∫M∇φ·∇η in strong nodal form W⁻¹S."""
        return sp.diags(1.0 / self.cfg.W) @ (self.q_coeff * self.stiff_q)

    def upwind_divergence(self, u: np.ndarray) -> sp.csr_matrix:
        """Matrix of c ↦ div(u c) with the upwind value of c on every face."""
        om = self.omega
        rows, cols, vals = [], [], []
        ux, uy = om.split_velocity(u)
        nx, ny = om.nx, om.ny
        for axis, uf, h in ((0, ux, om.hx), (1, uy, om.hy)):
            nfx, nfy = uf.shape
            I, J = np.meshgrid(np.arange(nfx), np.arange(nfy), indexing="ij")
            I, J = I.ravel(), J.ravel()
            vel = uf.ravel()
            if axis == 0:
                L_i, R_i = I - 1, I
                L_j = R_j = J
                valid = (I >= 1) & (I <= nx - 1) if not om.periodic else np.ones_like(I, bool)
                L_i = L_i % nx
            else:
                L_j, R_j = J - 1, J
                L_i = R_i = I
                valid = (J >= 1) & (J <= ny - 1) if not om.periodic else np.ones_like(J, bool)
                L_j = L_j % ny
            cL = (L_i * ny + L_j)[valid]
            cR = (R_i * ny + R_j)[valid]
            v = vel[valid]
            up = np.where(v > 0, cL, cR)
            # flux v·c_up / h leaves cL and enters cR
            rows += [cL, cR]
            cols += [up, up]
            vals += [v / h, -v / h]
        n = om.ncell
        return _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n))

    def convection(self, a: np.ndarray) -> sp.csr_matrix:
        """Matrix N with (N v) = (a·∇)v on the velocity faces."""
        ax = self.vel_avg_x @ a
        ay = self.vel_avg_y @ a
        return sp.diags(ax) @ self.face_dx + sp.diags(ay) @ self.face_dy

    def face_gradient(self, c: np.ndarray) -> np.ndarray:
        return self.grad_x @ c

    def upwind_face_values(self, c: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Upwind value on each velocity face of a cell field c (shape (ncell, ...))."""
        L, R = self._face_neighbours
        c = np.asarray(c)
        cl, cr = c[L], c[R]
        shape = (-1,) + (1,) * (c.ndim - 1)
        vel = np.asarray(u).reshape(shape)
        return np.where(vel > 0, cl, np.where(vel < 0, cr, 0.5 * (cl + cr)))

    @property
    def _face_neighbours(self):
        if not hasattr(self, "_fn_cache"):
            self._fn_cache = _face_neighbours(self.omega)
        return self._fn_cache


def _face_neighbours(om: OmegaGrid):
    """Cell indices left/below (L) and right/above (R) of every velocity face."""
    nx, ny = om.nx, om.ny
    out_L, out_R = [], []
    for axis, shape in ((0, om.ux_shape), (1, om.uy_shape)):
        I, J = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
        I, J = I.ravel(), J.ravel()
        if axis == 0:
            Li, Lj, Ri, Rj = I - 1, J, I, J
        else:
            Li, Lj, Ri, Rj = I, J - 1, I, J
        Li, Ri = np.clip(Li % nx if om.periodic else Li, 0, nx - 1), np.clip(Ri % nx if om.periodic else Ri, 0, nx - 1)
        Lj, Rj = np.clip(Lj % ny if om.periodic else Lj, 0, ny - 1), np.clip(Rj % ny if om.periodic else Rj, 0, ny - 1)
        out_L.append(Li * ny + Lj)
        out_R.append(Ri * ny + Rj)
    return np.concatenate(out_L), np.concatenate(out_R)


def _velocity_operators(om: OmegaGrid):
    nx, ny, hx, hy = om.nx, om.ny, om.hx, om.hy
    per = om.periodic
    nux = om.n_ux
    nvel = om.n_vel
    ncell = om.ncell
    uxs, uys = om.ux_shape, om.uy_shape
    cs = om.corner_shape
    ncorner = cs[0] * cs[1]

    def ux_id(i, j):
        return i * uxs[1] + j

    def uy_id(i, j):
        return nux + i * uys[1] + j

    # cell-centred normal derivatives
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    cell = I * ny + J
    ip = (I + 1) % nx if per else I + 1
    jp = (J + 1) % ny if per else J + 1
    dxx = _coo(np.r_[cell, cell], np.r_[ux_id(ip, J), ux_id(I, J)],
               np.r_[np.full(ncell, 1 / hx), np.full(ncell, -1 / hx)], (ncell, nvel))
    dyy = _coo(np.r_[cell, cell], np.r_[uy_id(I, jp), uy_id(I, J)],
               np.r_[np.full(ncell, 1 / hy), np.full(ncell, -1 / hy)], (ncell, nvel))
    div = (dxx + dyy).tocsr()

    # corner shear derivatives, no-slip via reflected ghost values
    CI, CJ = np.meshgrid(np.arange(cs[0]), np.arange(cs[1]), indexing="ij")
    CI, CJ = CI.ravel(), CJ.ravel()
    corner = CI * cs[1] + CJ
    rows, cols, vals = [], [], []
    for c, i, j in zip(corner, CI, CJ):
        # ∂y ux at corner (i, j): ux[i, j] - ux[i, j-1]
        if per:
            rows += [c, c]; cols += [ux_id(i, j), ux_id(i, (j - 1) % ny)]; vals += [1 / hy, -1 / hy]
        else:
            if j == 0:
                rows += [c]; cols += [ux_id(i, 0)]; vals += [2 / hy]
            elif j == ny:
                rows += [c]; cols += [ux_id(i, ny - 1)]; vals += [-2 / hy]
            else:
                rows += [c, c]; cols += [ux_id(i, j), ux_id(i, j - 1)]; vals += [1 / hy, -1 / hy]
    cyx = _coo(rows, cols, vals, (ncorner, nvel))
    rows, cols, vals = [], [], []
    for c, i, j in zip(corner, CI, CJ):
        if per:
            rows += [c, c]; cols += [uy_id(i, j), uy_id((i - 1) % nx, j)]; vals += [1 / hx, -1 / hx]
        else:
            if i == 0:
                rows += [c]; cols += [uy_id(0, j)]; vals += [2 / hx]
            elif i == nx:
                rows += [c]; cols += [uy_id(nx - 1, j)]; vals += [-2 / hx]
            else:
                rows += [c, c]; cols += [uy_id(i, j), uy_id(i - 1, j)]; vals += [1 / hx, -1 / hx]
    cxy = _coo(rows, cols, vals, (ncorner, nvel))
    free = om.free_velocity_mask()
    pin = sp.diags(free.astype(float))
    cyx, cxy, dxx, dyy, div = cyx @ pin, cxy @ pin, dxx @ pin, dyy @ pin, div @ pin

    cvol = np.full(cs, om.vol)
    if not per:
        cvol[0, :] *= 0.5
        cvol[-1, :] *= 0.5
        cvol[:, 0] *= 0.5
        cvol[:, -1] *= 0.5
    cvol = cvol.ravel()

    # corners -> cells average
    corners_of = [((I + di) % cs[0] if per else I + di) * cs[1] + ((J + dj) % cs[1] if per else J + dj)
                  for di in (0, 1) for dj in (0, 1)]
    c2c = _coo(np.tile(cell, 4), np.concatenate(corners_of), np.full(4 * ncell, 0.25), (ncell, ncorner))

    cell_grad = sp.vstack([dxx, c2c @ cyx, c2c @ cxy, dyy]).tocsr()

    # scalar gradient on faces (-div adjoint) and face averages
    L, R = _face_neighbours(om)
    fI = np.arange(nvel)
    axis = np.r_[np.zeros(nux, int), np.ones(nvel - nux, int)]
    hf = np.where(axis == 0, hx, hy)
    grad = _coo(np.r_[fI, fI], np.r_[R, L], np.r_[1 / hf, -1 / hf], (nvel, ncell))
    grad = (pin @ grad).tocsr()
    c2f = _coo(np.r_[fI, fI], np.r_[L, R], np.full(2 * nvel, 0.5), (nvel, ncell))

    # operators for the convective derivative at faces
    rows, cols, vals = [], [], []
    uxI, uxJ = np.meshgrid(np.arange(uxs[0]), np.arange(uxs[1]), indexing="ij")
    uxI, uxJ = uxI.ravel(), uxJ.ravel()
    uyI, uyJ = np.meshgrid(np.arange(uys[0]), np.arange(uys[1]), indexing="ij")
    uyI, uyJ = uyI.ravel(), uyJ.ravel()

    # x-derivative of ux at x-faces (central), of uy at y-faces (corner average)
    fdx_r, fdx_c, fdx_v = [], [], []
    for i, j in zip(uxI, uxJ):
        f = ux_id(i, j)
        if per:
            fdx_r += [f, f]; fdx_c += [ux_id((i + 1) % nx, j), ux_id((i - 1) % nx, j)]
            fdx_v += [0.5 / hx, -0.5 / hx]
        elif 1 <= i <= nx - 1:
            fdx_r += [f, f]; fdx_c += [ux_id(i + 1, j), ux_id(i - 1, j)]; fdx_v += [0.5 / hx, -0.5 / hx]
    face_dx_ux = _coo(fdx_r, fdx_c, fdx_v, (nvel, nvel)) @ pin
    # y-face rows: average of cxy at corners (i, j) and (i+1, j)
    r2, c2, v2 = [], [], []
    for i, j in zip(uyI, uyJ):
        f = uy_id(i, j)
        for di in (0, 1):
            ci = (i + di) % cs[0] if per else i + di
            r2.append(f); c2.append(ci * cs[1] + j); v2.append(0.5)
    face_dx = face_dx_ux + _coo(r2, c2, v2, (nvel, ncorner)) @ cxy

    fdy_r, fdy_c, fdy_v = [], [], []
    for i, j in zip(uyI, uyJ):
        f = uy_id(i, j)
        if per:
            fdy_r += [f, f]; fdy_c += [uy_id(i, (j + 1) % ny), uy_id(i, (j - 1) % ny)]
            fdy_v += [0.5 / hy, -0.5 / hy]
        elif 1 <= j <= ny - 1:
            fdy_r += [f, f]; fdy_c += [uy_id(i, j + 1), uy_id(i, j - 1)]; fdy_v += [0.5 / hy, -0.5 / hy]
    face_dy_uy = _coo(fdy_r, fdy_c, fdy_v, (nvel, nvel)) @ pin
    r2, c2, v2 = [], [], []
    for i, j in zip(uxI, uxJ):
        f = ux_id(i, j)
        for dj in (0, 1):
            cj = (j + dj) % cs[1] if per else j + dj
            r2.append(f); c2.append(i * cs[1] + cj); v2.append(0.5)
    face_dy = face_dy_uy + _coo(r2, c2, v2, (nvel, ncorner)) @ cyx

    # interpolation of each velocity component to all faces
    r_ax, c_ax, v_ax = [], [], []
    r_ay, c_ay, v_ay = [], [], []
    for i, j in zip(uxI, uxJ):
        f = ux_id(i, j)
        r_ax.append(f); c_ax.append(f); v_ax.append(1.0)
        # uy at the four surrounding y-faces: (i-1, j), (i, j), (i-1, j+1), (i, j+1)
        for di in (-1, 0):
            for dj in (0, 1):
                ii, jj = i + di, j + dj
                if per:
                    ii, jj = ii % nx, jj % ny
                elif not (0 <= ii < uys[0] and 0 <= jj < uys[1]):
                    continue
                r_ay.append(f); c_ay.append(uy_id(ii, jj)); v_ay.append(0.25)
    for i, j in zip(uyI, uyJ):
        f = uy_id(i, j)
        r_ay.append(f); c_ay.append(f); v_ay.append(1.0)
        for di in (0, 1):
            for dj in (-1, 0):
                ii, jj = i + di, j + dj
                if per:
                    ii, jj = ii % nx, jj % ny
                elif not (0 <= ii < uxs[0] and 0 <= jj < uxs[1]):
                    continue
                r_ax.append(f); c_ax.append(ux_id(ii, jj)); v_ax.append(0.25)
    vel_avg_x = _coo(r_ax, c_ax, v_ax, (nvel, nvel)) @ pin
    vel_avg_y = _coo(r_ay, c_ay, v_ay, (nvel, nvel)) @ pin

    V = om.vol
    Cv = sp.diags(cvol)
    shear = cyx + cxy
    strain = V * (dxx.T @ dxx + dyy.T @ dyy) + 0.5 * (shear.T @ Cv @ shear)
    divdiv = V * (div.T @ div)
    veclap = V * (dxx.T @ dxx + dyy.T @ dyy) + cyx.T @ Cv @ cyx + cxy.T @ Cv @ cxy
    stiff = V * (grad.T @ grad)
    lap = -(1.0 / V) * stiff
    return dict(grad_x=grad, div_x=div.tocsr(), stiff_x=stiff.tocsr(), laplace_x=lap.tocsr(),
                dxx=dxx.tocsr(), dyy=dyy.tocsr(), cyx=cyx.tocsr(), cxy=cxy.tocsr(), corner_vol=cvol,
                corner_to_cell=c2c, cell_grad=cell_grad, cell_to_face=c2f,
                face_dx=face_dx.tocsr(), face_dy=face_dy.tocsr(), vel_avg_x=vel_avg_x.tocsr(),
                vel_avg_y=vel_avg_y.tocsr(), face_axis=axis, free=free,
                strain_form=strain.tocsr(), divdiv_form=divdiv.tocsr(), vec_laplace_form=veclap.tocsr())


def q_stiffness(sg: SpringGrid) -> sp.csr_matrix:
    """Two-point M-weighted stiffness ∫M∇_qφ·∇_qη on one polar grid."""
    n_r, n_t = sg.n_r, sg.n_theta
    r, rf, dth = sg.r, sg.r_face, sg.dtheta
    idx = np.arange(n_r * n_t).reshape(n_r, n_t)
    # radial faces between shells k and k+1
    t_rad = dth * sg.m_face[1:-1] * rf[1:-1] / (r[1:] - r[:-1])
    a = idx[:-1, :].ravel()
    b = idx[1:, :].ravel()
    tr = np.repeat(t_rad, n_t)
    # angular faces between sectors m and m+1 (cyclic)
    w_cell = sg.w_rad / n_t
    t_ang = w_cell / (r ** 2 * dth ** 2)
    a2 = idx.ravel()
    b2 = np.roll(idx, -1, axis=1).ravel()
    ta = np.repeat(t_ang, n_t)
    A = np.r_[a, a2]
    B = np.r_[b, b2]
    T = np.r_[tr, ta]
    n = n_r * n_t
    rows = np.r_[A, B, A, B]
    cols = np.r_[A, B, B, A]
    vals = np.r_[T, T, -T, -T]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def drag_geometry(sg: SpringGrid) -> dict:
    """Geometric factors of the exact face fluxes ∫_face M (σq)·n."""
    icc, isc, iss = sg.sector_integrals()
    n_r, n_t = sg.n_r, sg.n_theta
    tf = sg.theta + 0.5 * sg.dtheta
    c, s = np.cos(tf), np.sin(tf)
    idx = np.arange(n_r * n_t).reshape(n_r, n_t)
    return {
        # radial faces (interior only; the outer boundary carries M = 0, the centre has zero length)
        "rad_scale": (sg.m_face[1:-1] * sg.r_face[1:-1] ** 2),          # (n_r-1,)
        "rad_ang": np.stack([icc, isc, isc, iss], -1),                     # σ11, σ12, σ21, σ22 weights
        "rad_lo": idx[:-1, :], "rad_hi": idx[1:, :],
        # angular faces
        "ang_scale": sg.w_rad / (2.0 * math.pi),                          # (n_r,)
        "ang_ang": np.stack([-s * c, -s * s, c * c, s * c], -1),
        "ang_lo": idx, "ang_hi": np.roll(idx, -1, axis=1),
        "inc_rad": _incidence(idx[:-1, :], idx[1:, :], n_r * n_t),
        "inc_ang": _incidence(idx, np.roll(idx, -1, axis=1), n_r * n_t),
    }


def _incidence(lo, hi, n):
    """Face-to-node incidence: +1 at the high node, -1 at the low node."""
    lo, hi = lo.ravel(), hi.ravel()
    f = np.arange(lo.size)
    return sp.csr_matrix((np.r_[np.ones(lo.size), -np.ones(lo.size)], (np.r_[f, f], np.r_[hi, lo])),
                         shape=(lo.size, n))


def assemble_operators(omega: OmegaGrid, cfg: ConfigGrid, chain: ChainParams,
                       params: Optional[ModelParams] = None) -> DiscreteOperators:
    if cfg.chain != chain:
        raise AssemblyError("configuration grid was built for a different chain")
    vel = _velocity_operators(omega)
    ops = DiscreteOperators(omega=omega, cfg=cfg, **vel)
    if chain.K == 1:
        sg = cfg.springs[0]
        ops.stiff_q = q_stiffness(sg)
        ops.cell_T = sg.cell_tensors()
        ops.drag_geom = drag_geometry(sg)
        if params is not None:
            ops.q_coeff = float(np.sum(chain.A)) / (4.0 * params.lam)
            ops.eps = params.eps
    elif params is not None:
        # the coupled q-operator with cross terms A_ij ∇_{q_i}·∇_{q_j} is only assembled for K = 1
        raise AssemblyError("Fokker-Planck q-operator is assembled for K = 1 only")
    return ops


def drag_face_fluxes(ops: DiscreteOperators, sigma: np.ndarray):
    """Face fluxes ∫_face M (σq)·n for every Ω-cell.

    ``sigma`` has shape (ncell, 4) with components (11, 12, 21, 22).
    Returns (F_rad, F_ang) of shapes (ncell, n_r-1, n_θ) and (ncell, n_r, n_θ),
    oriented from the lower to the higher radial / angular index.
    """
    g = ops.drag_geom
    ang_r = sigma @ g["rad_ang"].T          # (ncell, n_θ)
    F_rad = g["rad_scale"][None, :, None] * ang_r[:, None, :]
    ang_t = sigma @ g["ang_ang"].T
    F_ang = g["ang_scale"][None, :, None] * ang_t[:, None, :]
    return F_rad, F_ang


def drag_weak(ops: DiscreteOperators, sigma: np.ndarray, beta_rad: np.ndarray, beta_ang: np.ndarray,
              phi: np.ndarray) -> np.ndarray:
    """Per-cell value of Σ_faces F_f β_f (φ_hi - φ_lo), the discrete ∫M β (σq)·∇_qφ."""
    g = ops.drag_geom
    F_rad, F_ang = drag_face_fluxes(ops, sigma)
    phi = phi.reshape(phi.shape[0], -1)
    d_rad = phi[:, g["rad_hi"]] - phi[:, g["rad_lo"]]
    d_ang = phi[:, g["ang_hi"]] - phi[:, g["ang_lo"]]
    return np.sum(F_rad * beta_rad * d_rad, axis=(1, 2)) + np.sum(F_ang * beta_ang * d_ang, axis=(1, 2))


def drag_load(ops: DiscreteOperators, sigma: np.ndarray, beta_rad: np.ndarray,
              beta_ang: np.ndarray) -> np.ndarray:
    """Nodal load vector of the drag term: gradient of drag_weak with respect to φ."""
    g = ops.drag_geom
    F_rad, F_ang = drag_face_fluxes(ops, sigma)
    nc = sigma.shape[0]
    fr = (F_rad * beta_rad).reshape(nc, -1)
    fa = (F_ang * beta_ang).reshape(nc, -1)
    return np.asarray(fr @ g["inc_rad"] + fa @ g["inc_ang"])


def face_pair_values(ops: DiscreteOperators, psi: np.ndarray):
    """(lo, hi) nodal values across radial and angular q-faces for each Ω-cell."""
    g = ops.drag_geom
    psi = psi.reshape(psi.shape[0], -1)
    return ((psi[:, g["rad_lo"]], psi[:, g["rad_hi"]]), (psi[:, g["ang_lo"]], psi[:, g["ang_hi"]]))
