"""Finite-difference quasi-geostrophic (barotropic vorticity) model.

    omega_t + J(psi, omega) - Ro^{-1} psi_x = Re^{-1} lap(omega) + Ro^{-1} F
    J(psi, omega) = psi_y omega_x - psi_x omega_y,   omega = -lap(psi)

on [0, 1] x [0, 2] with homogeneous Dirichlet boundaries.  Fields are stored
on interior points as arrays of shape ``(nx, ny)`` (x index first), or
``(nx, ny, N)`` for a batch; flattened state vectors use C order, so the flat
index of point ``(i, j)`` is ``i * ny + j``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleGrids, ShapeMismatch
from .integrate import StepController, integrate_ode

DAY = 0.0109
"""Model time units per 24 hours (80 units represent 20.12 years)."""

YEAR = 80.0 / 20.12


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 2.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grids need at least 3 interior points per axis")

    @property
    def hx(self):
        return self.lx / (self.nx + 1)

    @property
    def hy(self):
        return self.ly / (self.ny + 1)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def x(self):
        return self.hx * np.arange(1, self.nx + 1)

    @property
    def y(self):
        return self.hy * np.arange(1, self.ny + 1)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def index_coords(self, indices=None):
        """Grid-unit coordinates ``(i, j)`` of flat indices, shape ``(k, 2)``."""
        idx = np.arange(self.n) if indices is None else np.asarray(indices)
        return np.stack(np.unravel_index(idx, self.shape), axis=1).astype(float)

    @classmethod
    def paper_truth(cls):
        return cls(255, 511)

    @classmethod
    def paper_fom(cls):
        return cls(63, 127)

    @classmethod
    def desk_truth(cls):
        return cls(127, 255)

    @classmethod
    def desk_fom(cls):
        return cls(31, 63)


@dataclass
class QgeParams:
    Re: float = 450.0
    Ro: float = 0.0036
    forcing_amplitude: float = 1.0

    def __post_init__(self):
        if not (self.Re > 0 and self.Ro > 0):
            raise ValueError("Re and Ro must be positive")

    def forcing(self, grid):
        """Double-gyre forcing ``sin(pi (y - 1))`` on the interior points."""
        _, y = grid.mesh()
        return self.forcing_amplitude * np.sin(np.pi * (y - 1.0))


@dataclass
class QgeState:
    omega: np.ndarray
    t: float = 0.0


def laplacian_matrix(grid):
    """Sparse 5-point Laplacian with homogeneous Dirichlet boundaries (n x n)."""
    dx = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(grid.nx, grid.nx)) / grid.hx**2
    dy = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(grid.ny, grid.ny)) / grid.hy**2
    return (sp.kron(dx, sp.eye(grid.ny)) + sp.kron(sp.eye(grid.nx), dy)).tocsr()


class PoissonSolver:
    """Solves ``-lap(psi) = omega`` with a factorization computed once per grid.

    ``method="cholesky"`` factors the SPD matrix ``-lap`` with SuperLU using a
    symmetric minimum-degree ordering; ``method="dst"`` diagonalizes the same
    discrete operator with type-I sine transforms (same linear system, faster
    on large grids).
    """

    def __init__(self, grid, method="cholesky"):
        self.grid = grid
        self.method = method
        self.neg_lap = (-laplacian_matrix(grid)).tocsc()
        if method == "cholesky":
            self._lu = spla.splu(self.neg_lap, permc_spec="MMD_AT_PLUS_A")
        elif method == "dst":
            kx = np.arange(1, grid.nx + 1)
            ky = np.arange(1, grid.ny + 1)
            ex = (2.0 - 2.0 * np.cos(np.pi * kx / (grid.nx + 1))) / grid.hx**2
            ey = (2.0 - 2.0 * np.cos(np.pi * ky / (grid.ny + 1))) / grid.hy**2
            self._eig = ex[:, None] + ey[None, :]
        else:
            raise ValueError(f"unknown Poisson method {method!r}")

    def solve(self, omega):
        """Streamfunction for a field ``(nx, ny[, N])`` or flat ``(n[, N])`` input."""
        omega = np.asarray(omega, dtype=float)
        g = self.grid
        if omega.shape[:2] == g.shape:
            batch = omega.shape[2:]
            flat = omega.reshape(g.n, -1)
            return self._solve_flat(flat).reshape(g.shape + batch)
        if omega.shape[0] != g.n:
            raise ShapeMismatch(f"field of shape {omega.shape} does not fit grid {g.shape}")
        return self._solve_flat(omega.reshape(g.n, -1)).reshape(omega.shape)

    def _solve_flat(self, rhs):
        if self.method == "cholesky":
            return self._lu.solve(rhs)
        f = rhs.reshape(self.grid.shape + (-1,))
        coef = sfft.dstn(f, type=1, axes=(0, 1)) / self._eig[..., None]
        return sfft.idstn(coef, type=1, axes=(0, 1)).reshape(self.grid.n, -1)

    def residual(self, psi, omega):
        """Relative residual ``|-lap psi - omega| / |omega|``."""
        psi = np.asarray(psi, dtype=float).reshape(self.grid.n, -1)
        omega = np.asarray(omega, dtype=float).reshape(self.grid.n, -1)
        r = np.linalg.norm(self.neg_lap @ psi - omega)
        return r / max(np.linalg.norm(omega), np.finfo(float).tiny)


def _pad(a):
    return np.pad(a, ((1, 1), (1, 1)) + ((0, 0),) * (a.ndim - 2))


def arakawa_jacobian(psi, omega, grid):
    """Energy- and enstrophy-conserving Arakawa form of ``psi_y omega_x - psi_x omega_y``."""
    p, w = _pad(np.asarray(psi, dtype=float)), _pad(np.asarray(omega, dtype=float))
    c = slice(1, -1)
    pe, pw, pn, ps = p[2:, c], p[:-2, c], p[c, 2:], p[c, :-2]
    we, ww, wn, ws = w[2:, c], w[:-2, c], w[c, 2:], w[c, :-2]
    pne, pnw, pse, psw = p[2:, 2:], p[:-2, 2:], p[2:, :-2], p[:-2, :-2]
    wne, wnw, wse, wsw = w[2:, 2:], w[:-2, 2:], w[2:, :-2], w[:-2, :-2]
    # three second-order forms of p_x w_y - p_y w_x
    j1 = (pe - pw) * (wn - ws) - (pn - ps) * (we - ww)
    j2 = pe * (wne - wse) - pw * (wnw - wsw) - pn * (wne - wnw) + ps * (wse - wsw)
    j3 = wn * (pne - pnw) - ws * (pse - psw) - we * (pne - pse) + ww * (pnw - psw)
    return -(j1 + j2 + j3) / (12.0 * grid.hx * grid.hy)


def laplacian(field_, grid):
    w = _pad(field_)
    c = slice(1, -1)
    return ((w[2:, c] - 2.0 * field_ + w[:-2, c]) / grid.hx**2
            + (w[c, 2:] - 2.0 * field_ + w[c, :-2]) / grid.hy**2)


def ddx(field_, grid):
    w = _pad(field_)
    return (w[2:, 1:-1] - w[:-2, 1:-1]) / (2.0 * grid.hx)


class QgeModel:
    """Grid, parameters and Poisson solver for one QGE resolution."""

    def __init__(self, grid, params=None, solver=None, controller=None):
        self.grid = grid
        self.params = params or QgeParams()
        self.solver = solver or PoissonSolver(grid)
        self.controller = controller or StepController()
        self._forcing = self.params.forcing(grid) / self.params.Ro

    def rhs(self, omega, psi=None):
        """Vorticity tendency for a field or a batch ``(nx, ny, N)``."""
        p = self.params
        if psi is None:
            psi = self.solver.solve(omega)
        forcing = self._forcing if omega.ndim == 2 else self._forcing[..., None]
        return (-arakawa_jacobian(psi, omega, self.grid) + ddx(psi, self.grid) / p.Ro
                + laplacian(omega, self.grid) / p.Re + forcing)

    def integrate(self, state, t_end, controller=None, stats=None):
        omega, _ = integrate_ode(lambda t, w: self.rhs(w), state.omega, state.t, t_end,
                                 controller or self.controller, stats)
        return QgeState(omega, float(t_end))

    def omega_from_psi(self, psi):
        """``-lap(psi)`` for flat state vectors ``(n[, N])``."""
        return self.solver.neg_lap @ np.asarray(psi, dtype=float)

    def psi_from_omega(self, omega):
        return self.solver.solve(omega)

    def propagate(self, psi, t0, t1, controller=None, stats=None):
        """Advance flat streamfunction states ``(n[, N])`` from ``t0`` to ``t1``."""
        psi = np.asarray(psi, dtype=float)
        batch = psi.shape[1:]
        omega = self.omega_from_psi(psi).reshape(self.grid.shape + batch)
        out = self.integrate(QgeState(omega, t0), t1, controller, stats)
        return self.psi_from_omega(out.omega.reshape((self.grid.n,) + batch))


def integrate(state, model, t_end, controller=None):
    """Advance a :class:`QgeState` to ``t_end`` (final step lands exactly on it)."""
    return model.integrate(state, t_end, controller)


def _coarsen_ratio(fine, coarse):
    rx, ry = (fine.nx + 1) / (coarse.nx + 1), (fine.ny + 1) / (coarse.ny + 1)
    if rx != ry or rx < 1 or rx != int(rx) or (int(rx) & (int(rx) - 1)):
        raise IncompatibleGrids(f"cannot restrict {fine.shape} to {coarse.shape}")
    return int(rx)


def full_weighting(f):
    """One level of 9-point full-weighting restriction (interior nf = 2 nc + 1)."""
    if f.shape[0] % 2 == 0 or f.shape[1] % 2 == 0:
        raise IncompatibleGrids("full weighting needs odd interior point counts")
    fp = _pad(f)
    c = fp[2:-1:2, 2:-1:2]
    e, w = fp[3::2, 2:-1:2], fp[1:-2:2, 2:-1:2]
    n, s = fp[2:-1:2, 3::2], fp[2:-1:2, 1:-2:2]
    ne, nw = fp[3::2, 3::2], fp[1:-2:2, 3::2]
    se, sw = fp[3::2, 1:-2:2], fp[1:-2:2, 1:-2:2]
    return (4.0 * c + 2.0 * (e + w + n + s) + (ne + nw + se + sw)) / 16.0


def restrict_to_fom(dns_state, dns_grid, fom_grid):
    """Full-weighting restriction of a vorticity field onto a coarser grid."""
    ratio = _coarsen_ratio(dns_grid, fom_grid)
    omega = dns_state.omega if isinstance(dns_state, QgeState) else np.asarray(dns_state)
    while ratio > 1:
        omega = full_weighting(omega)
        ratio //= 2
    if isinstance(dns_state, QgeState):
        return QgeState(omega, dns_state.t)
    return omega


def _prolong_axis(c, axis):
    c = np.moveaxis(c, axis, 0)
    cp = np.concatenate([np.zeros_like(c[:1]), c, np.zeros_like(c[:1])])
    out = np.empty((2 * c.shape[0] + 1,) + c.shape[1:])
    out[1::2] = c
    out[0::2] = 0.5 * (cp[:-1] + cp[1:])
    return np.moveaxis(out, 0, axis)


def prolong(coarse_field, coarse_grid, fine_grid):
    """Bilinear interpolation of a coarse field onto a finer nested grid."""
    ratio = _coarsen_ratio(fine_grid, coarse_grid)
    f = np.asarray(coarse_field, dtype=float)
    while ratio > 1:
        f = _prolong_axis(_prolong_axis(f, 0), 1)
        ratio //= 2
    return f


def equally_spaced_indices(n, count=150):
    """``count`` flat indices with constant stride spread over ``range(n)``."""
    stride = n // count
    if stride < 1:
        raise ValueError(f"cannot place {count} observations in {n} variables")
    return stride // 2 + stride * np.arange(count)


def observe(state, indices, sampler=None, cov_obs=None):
    """Vorticity at flat ``indices`` plus ``N(0, cov_obs)`` noise.

    ``sampler`` is a :class:`~mfenkf.ensemble.GaussianSampler` whose factor
    matches ``cov_obs``; with no sampler the gather is noise-free.
    """
    omega = state.omega if isinstance(state, QgeState) else np.asarray(state)
    flat = omega.reshape(-1)
    idx = np.asarray(indices)
    if idx.min() < 0 or idx.max() >= flat.size:
        raise IndexError("observation index out of range")
    y = flat[idx].copy()
    if sampler is not None:
        y += sampler.draw(1)[:, 0]
    return y


_MAGIC = b"QGEF"
_HEADER = struct.Struct("<4sqqd")


def write_field(path, omega, t=0.0):
    """Flat little-endian float64 row-major field with an (nx, ny, t) header."""
    omega = np.ascontiguousarray(omega, dtype="<f8")
    nx, ny = omega.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, nx, ny, float(t)))
        fh.write(omega.tobytes(order="C"))


def read_field(path):
    with open(path, "rb") as fh:
        magic, nx, ny, t = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a field snapshot")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return QgeState(data.reshape(nx, ny).copy(), t)


def export_csv(path, omega, grid):
    """Write ``x,y,value`` rows for plotting."""
    x, y = grid.mesh()
    np.savetxt(path, np.column_stack([x.ravel(), y.ravel(), np.asarray(omega).ravel()]),
               delimiter=",", header="x,y,value", comments="", fmt="%.17g")
