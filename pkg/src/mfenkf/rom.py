"""POD by the method of snapshots and the Galerkin quasi-geostrophic ROM.

Vorticity is expanded as ``omega = sum_i a_i phi_i`` in D-orthonormal modes,
where ``D`` holds 2-D Simpson quadrature weights; the matching streamfunction
modes solve ``-lap(phi_tilde_i) = phi_i``.  Galerkin projection of the
discrete right-hand side gives

    a_t = b + A a + a^T B a,
    b_i     = Ro^{-1} <F, phi_i>
    A_ij    = Ro^{-1} <d/dx phi_tilde_j, phi_i> + Re^{-1} <lap phi_j, phi_i>
    B_imn   = -<J(phi_tilde_m, phi_n), phi_i>

with the same finite-difference operators as the full model, so the ROM
right-hand side is the exact D-projection of the FOM right-hand side on the
span of the modes.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import BasisDegenerate, RankDeficient, ShapeMismatch
from .integrate import StepController, integrate_ode
from .projection import ProjectionPair
from .qge import Grid2D, PoissonSolver, QgeParams, QgeState, arakawa_jacobian, ddx, laplacian

RANK_RTOL = 1e-10


def simpson_weights_1d(n_nodes, h):
    """Composite Simpson weights on ``n_nodes`` equispaced nodes.

    An even node count closes the last panel with the trapezoid rule.
    """
    if n_nodes < 3:
        raise ValueError("Simpson's rule needs at least three nodes")
    w = np.zeros(n_nodes)
    odd = n_nodes if n_nodes % 2 == 1 else n_nodes - 1
    w[:odd:2] = 2.0
    w[1:odd:2] = 4.0
    w[0] = w[odd - 1] = 1.0
    w[:odd] *= h / 3.0
    if odd < n_nodes:
        w[odd - 1] += h / 2.0
        w[odd] += h / 2.0
    return w


def simpson_weights(grid):
    """Interior Simpson weights, flattened in state order (diagonal of D)."""
    wx = simpson_weights_1d(grid.nx + 2, grid.hx)[1:-1]
    wy = simpson_weights_1d(grid.ny + 2, grid.hy)[1:-1]
    return np.outer(wx, wy).ravel()


@dataclass
class SnapshotSet:
    """Vorticity snapshots as columns of an ``(n, M)`` matrix."""

    snapshots: np.ndarray
    times: np.ndarray
    grid: Grid2D
    weights: np.ndarray = None

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.snapshots.ndim != 2 or self.snapshots.shape[0] != self.grid.n:
            raise ShapeMismatch(f"snapshots {self.snapshots.shape} do not fit grid {self.grid.shape}")
        if self.snapshots.shape[1] < 2:
            raise ValueError("need at least two snapshots")
        if self.times.shape != (self.snapshots.shape[1],):
            raise ShapeMismatch("one time stamp per snapshot required")
        if self.weights is None:
            self.weights = simpson_weights(self.grid)

    @property
    def count(self):
        return self.snapshots.shape[1]

    def gram(self):
        """Snapshot correlation matrix ``C_ij = <omega_i, omega_j>_D``."""
        w = self.snapshots
        c = w.T @ (self.weights[:, None] * w)
        return 0.5 * (c + c.T)


def collect_snapshots(model, omega0, count, spacing, t0=0.0, controller=None):
    """Sample ``count`` states ``spacing`` time units apart along one trajectory.

    The first snapshot is ``omega0`` itself, taken at ``t0``.
    """
    state = QgeState(np.asarray(omega0, dtype=float), float(t0))
    fields, times = [state.omega.ravel()], [state.t]
    for k in range(1, count):
        state = model.integrate(state, t0 + k * spacing, controller)
        fields.append(state.omega.ravel())
        times.append(state.t)
    return SnapshotSet(np.column_stack(fields), np.array(times), model.grid)


def pod_basis(snaps, r):
    """First ``r`` D-orthonormal POD modes and all Gram eigenvalues (descending)."""
    lam, v = np.linalg.eigh(snaps.gram())
    lam, v = lam[::-1], v[:, ::-1]
    rank = int(np.sum(lam > RANK_RTOL * max(lam[0], 0.0)))
    if not 1 <= r <= rank:
        raise RankDeficient(f"requested {r} modes but numerical rank is {rank}")
    modes = snaps.snapshots @ (v[:, :r] / np.sqrt(lam[:r]))
    return modes, np.clip(lam, 0.0, None)


def pod_basis_svd(snaps, r):
    """Cross-check: modes from the thin SVD of ``D^{1/2} W``."""
    sq = np.sqrt(snaps.weights)
    u, s, _ = np.linalg.svd(sq[:, None] * snaps.snapshots, full_matrices=False)
    return u[:, :r] / sq[:, None], s**2


def relative_kinetic_energy(rom, r, window=None):
    """Fraction of snapshot energy captured by the first ``r`` modes.

    Without a ``window`` this is ``sum(lam[:r]) / sum(lam)`` over the basis's
    own snapshots.  A window of vorticity columns ``(n, K)`` is scored by the
    projection ``sum_t |P_r omega_t|_D^2 / sum_t |omega_t|_D^2`` instead.
    """
    if window is None:
        lam = rom.eigenvalues
        return float(lam[:r].sum() / lam.sum())
    w = np.asarray(window, dtype=float)
    coef = rom.modes[:, :r].T @ (rom.weights[:, None] * w)
    return float(np.sum(coef**2) / np.sum(w * (rom.weights[:, None] * w)))


def galerkin_tensors(modes, psi_modes, params, grid):
    """``(b, A, B)`` from vorticity/streamfunction modes with Simpson weights."""
    r = modes.shape[1]
    d = simpson_weights(grid)
    proj = (d[:, None] * modes).T                       # (r, n): <., phi_i>_D
    phi = modes.reshape(grid.shape + (r,))
    phit = psi_modes.reshape(grid.shape + (r,))
    b = proj @ (params.forcing(grid).ravel() / params.Ro)
    lin = ddx(phit, grid) / params.Ro + laplacian(phi, grid) / params.Re
    A = proj @ lin.reshape(grid.n, r)
    B = np.empty((r, r, r))
    for m in range(r):
        jm = arakawa_jacobian(np.broadcast_to(phit[..., m:m + 1], phi.shape), phi, grid)
        B[:, m, :] = -proj @ jm.reshape(grid.n, r)
    return b, A, B


@dataclass
class GalerkinRom:
    """Reduced QGE dynamics ``a_t = b + A a + a^T B a`` in POD coordinates."""

    modes: np.ndarray
    psi_modes: np.ndarray
    eigenvalues: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    grid: Grid2D
    params: QgeParams = field(default_factory=QgeParams)
    controller: StepController = field(default_factory=StepController)

    def __post_init__(self):
        self._b2 = self.B.reshape(self.r, self.r * self.r)

    @property
    def r(self):
        return self.modes.shape[1]

    @property
    def weights(self):
        return simpson_weights(self.grid)

    def truncate(self, r):
        """The nested ROM on the first ``r`` modes (tensors are sub-blocks)."""
        if not 0 <= r <= self.r:
            raise RankDeficient(f"cannot truncate {self.r} modes to {r}")
        return replace(self, modes=self.modes[:, :r], psi_modes=self.psi_modes[:, :r],
                       b=self.b[:r], A=self.A[:r, :r], B=self.B[:r, :r, :r])

    def rhs(self, a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            return self.b + self.A @ a + self._b2 @ np.outer(a, a).ravel()
        quad = (a[:, None, :] * a[None, :, :]).reshape(self.r * self.r, a.shape[1])
        return self.b[:, None] + self.A @ a + self._b2 @ quad

    def propagate(self, a, t0, t1, controller=None, stats=None):
        """Advance coefficients ``(r[, N])`` from ``t0`` to ``t1``."""
        a = np.asarray(a, dtype=float)
        if self.r == 0:
            return a.copy()
        out, _ = integrate_ode(lambda t, y: self.rhs(y), a, t0, t1, controller or self.controller, stats)
        return out

    def project(self, omega):
        """Vorticity columns to coefficients ``<omega, phi_i>_D``."""
        return self.modes.T @ (self.weights[:, None] * np.asarray(omega, dtype=float).reshape(self.grid.n, -1))

    def save(self, path, snaps=None):
        """Portable ``.npz`` archive of modes, spectrum, tensors and grid."""
        extra = {} if snaps is None else {"snapshots": snaps.snapshots, "times": snaps.times}
        np.savez(path, modes=self.modes, psi_modes=self.psi_modes, eigenvalues=self.eigenvalues,
                 b=self.b, A=self.A, B=self.B, grid=np.array([self.grid.nx, self.grid.ny]),
                 extent=np.array([self.grid.lx, self.grid.ly]),
                 params=np.array([self.params.Re, self.params.Ro, self.params.forcing_amplitude]), **extra)

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            nx, ny = (int(v) for v in f["grid"])
            lx, ly = (float(v) for v in f["extent"])
            re, ro, amp = (float(v) for v in f["params"])
            return cls(f["modes"], f["psi_modes"], f["eigenvalues"], f["b"], f["A"], f["B"],
                       Grid2D(nx, ny, lx, ly), QgeParams(re, ro, amp))


def load_snapshots(path):
    """Snapshot set stored alongside a basis archive, or ``None``."""
    with np.load(path) as f:
        if "snapshots" not in f:
            return None
        nx, ny = (int(v) for v in f["grid"])
        lx, ly = (float(v) for v in f["extent"])
        return SnapshotSet(f["snapshots"], f["times"], Grid2D(nx, ny, lx, ly))


def build_rom(snaps, r, params=None, solver=None):
    """POD modes, streamfunction modes and Galerkin tensors for ``r`` modes."""
    params = params or QgeParams()
    solver = solver or PoissonSolver(snaps.grid)
    modes, lam = pod_basis(snaps, r)
    psi_modes = solver.solve(modes)
    b, A, B = galerkin_tensors(modes, psi_modes, params, snaps.grid)
    return GalerkinRom(modes, psi_modes, lam, b, A, B, snaps.grid, params)


def build_projection_pair(rom, solver=None):
    """Streamfunction-space pair with ``M = lap D lap``.

    ``phi = -lap^{-1} V`` lifts coefficients to a streamfunction and
    ``phi_star = -V^T D lap`` restricts a streamfunction to the coefficients of
    its vorticity, so ``phi_star @ phi = V^T D V = I``.
    """
    solver = solver or PoissonSolver(rom.grid)
    d = rom.weights
    phi_star = (d[:, None] * rom.modes).T @ solver.neg_lap
    factor = sp.diags(np.sqrt(d)) @ solver.neg_lap
    pair = ProjectionPair(rom.psi_modes, m_factor=factor, phi_star=np.asarray(phi_star))
    if pair.biorthogonality_error() > 1e-8:
        raise BasisDegenerate(f"biorthogonality error {pair.biorthogonality_error():.2e}")
    return pair
