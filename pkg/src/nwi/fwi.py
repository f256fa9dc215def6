"""Linear-acoustics full waveform inversion on an explicitly assembled operator.

The operator ``A`` acts on the space-time vector ``u`` (time-major, C-ordered
cells, length ``nx nz nt``). It is block lower-triangular in time, and every row
for step ``n >= 2`` is the linear (``B = 0``) discrete wave equation::

    (u[n] - 2u[n-1] + u[n-2]) / dt^2 + (2d/dt) (u[n-1] - u[n-2]) + d^2 u[n-1]
        - c^2 rho grad(1/rho) . grad(u[n-1]) - c^2 lap(u[n-1]) = f[n]

The heterogeneous-density term ``c^2 rho d/dx(1/rho d/dx u)`` is discretised in
product-rule form with the same stencils as the time stepper, so both engines
share one discretisation. Rows 0 and 1 are ``u / dt^2 = f``; rest initial
conditions therefore correspond to ``f[0] = f[1] = 0`` (see :func:`pulse_vector`).

Only tiny problems are meant to go through here; the whole point of the recurrent
engine is that it never needs this matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ProblemTooLarge, ShapeMismatch, SingularBlock
from .grid import ChannelData, PropertySet, SimulationGrid, check_cfl
from .stencils import grad, operator_matrices

log = logging.getLogger(__name__)

DEFAULT_MAX_UNKNOWNS = 200_000


@dataclass(eq=False)
class LinearWaveOperator:
    """Time-invariant blocks of ``A``; the full sparse matrix is built on demand."""

    grid: SimulationGrid
    kind: str  # "homogeneous" or "linear"
    diag: np.ndarray  # diagonal of every (n, n) block
    lag1: sp.csr_matrix  # block (n, n-1) for n >= 2
    lag2: sp.csr_matrix  # block (n, n-2) for n >= 2
    sos: np.ndarray
    density: np.ndarray
    attenuation: np.ndarray
    _matrix: sp.csr_matrix = field(default=None, repr=False)
    _lag1_t: sp.csr_matrix = field(default=None, repr=False)
    _lag2_t: sp.csr_matrix = field(default=None, repr=False)

    @property
    def n_unknowns(self):
        return self.grid.n_cells * self.grid.nt

    @property
    def matrix(self):
        if self._matrix is None:
            nt = self.grid.nt
            shift1 = sp.diags(np.r_[0.0, np.ones(nt - 2)], -1, shape=(nt, nt))
            shift2 = sp.diags(np.ones(nt - 2), -2, shape=(nt, nt))
            a = (
                sp.kron(sp.identity(nt), sp.diags(self.diag))
                + sp.kron(shift1, self.lag1)
                + sp.kron(shift2, self.lag2)
            ).tocsr()
            a.eliminate_zeros()
            a.sort_indices()
            self._matrix = a
        return self._matrix

    @property
    def lag1_t(self):
        if self._lag1_t is None:
            self._lag1_t = self.lag1.T.tocsr()
        return self._lag1_t

    @property
    def lag2_t(self):
        if self._lag2_t is None:
            self._lag2_t = self.lag2.T.tocsr()
        return self._lag2_t

    def apply(self, u):
        """Matrix-free ``A u`` via the time blocks."""
        n0, nt = self.grid.n_cells, self.grid.nt
        uu = np.asarray(u, float).reshape(nt, n0)
        out = uu * self.diag
        for n in range(2, nt):
            out[n] += self.lag1.dot(uu[n - 1]) + self.lag2.dot(uu[n - 2])
        return out.ravel()


def check_size(grid, max_unknowns=DEFAULT_MAX_UNKNOWNS):
    n = grid.n_cells * grid.nt
    if n > max_unknowns:
        raise ProblemTooLarge(f"{n} unknowns exceed the FWI baseline cap of {max_unknowns}")


def _assemble(grid, sos, density, attenuation, kind, max_unknowns):
    check_size(grid, max_unknowns)
    n0 = grid.n_cells
    dt = grid.dt
    idt2 = 1.0 / (dt * dt)
    dx_m, dz_m, lap_m = operator_matrices(grid.nx, grid.nz, grid.dx)
    c2 = (sos * sos).ravel()
    center = np.full(n0, -2.0 * idt2)
    lag2_diag = np.full(n0, idt2)
    if attenuation is not None:
        d = attenuation.ravel()
        center = center + (2.0 * d / dt + d * d)
        lag2_diag = lag2_diag - 2.0 * d / dt
    lag1 = sp.diags(center) - sp.diags(c2) @ lap_m
    if density is not None:
        gwx, gwz = grad(1.0 / density, grid.dx)
        k = c2 * density.ravel()
        coupling = sp.diags(k * gwx.ravel()) @ dx_m + sp.diags(k * gwz.ravel()) @ dz_m
        lag1 = lag1 - coupling
    lag1 = sp.csr_matrix(lag1)
    lag1.eliminate_zeros()
    lag1.sort_indices()
    lag2 = sp.diags(lag2_diag, format="csr")
    if density is None:
        density = np.ones(grid.shape)
    if attenuation is None:
        attenuation = np.zeros(grid.shape)
    return LinearWaveOperator(grid, kind, np.full(n0, idt2), lag1, lag2,
                              np.array(sos, float), np.array(density, float), np.array(attenuation, float))


def assemble_homogeneous(c0, grid, max_unknowns=DEFAULT_MAX_UNKNOWNS):
    """d'Alembert operator ``dtt - c^2 (dxx + dzz)``."""
    c0 = np.broadcast_to(np.asarray(c0, float), grid.shape)
    return _assemble(grid, c0, None, None, "homogeneous", max_unknowns)


def assemble_linear(c0, rho0, d, grid, max_unknowns=DEFAULT_MAX_UNKNOWNS):
    """Lossy heterogeneous-density linear operator (Westervelt without the quadratic term)."""
    maps = [np.broadcast_to(np.asarray(m, float), grid.shape) for m in (c0, rho0, d)]
    return _assemble(grid, *maps, "linear", max_unknowns)


def pulse_vector(pulse):
    """Space-time forcing vector; the first two steps are dropped (rest initial state)."""
    f = np.moveaxis(pulse.force, -1, 0).copy()
    f[:2] = 0.0
    return f.ravel()


def solve_wavefield(op: LinearWaveOperator, f):
    """Forward substitution over the time blocks: ``u = A^{-1} f``."""
    n0, nt = op.grid.n_cells, op.grid.nt
    f = np.asarray(f, float)
    if f.size != n0 * nt:
        raise ShapeMismatch(f"forcing length {f.size} != {n0 * nt}")
    if np.any(op.diag == 0):
        raise SingularBlock("zero on a diagonal time block")
    ff = f.reshape(nt, n0)
    u = np.zeros((nt, n0))
    for n in range(nt):
        rhs = ff[n].copy()
        if n >= 2:
            rhs -= op.lag1.dot(u[n - 1]) + op.lag2.dot(u[n - 2])
        u[n] = rhs / op.diag
    return u.ravel()


def solve_adjoint(op: LinearWaveOperator, g):
    """Backward substitution on the transposed blocks: ``r = A^{-T} g``."""
    n0, nt = op.grid.n_cells, op.grid.nt
    gg = np.asarray(g, float).reshape(nt, n0)
    if np.any(op.diag == 0):
        raise SingularBlock("zero on a diagonal time block")
    r = np.zeros((nt, n0))
    for n in range(nt - 1, -1, -1):
        rhs = gg[n].copy()
        if n + 1 < nt and n + 1 >= 2:
            rhs -= op.lag1_t.dot(r[n + 1])
        if n + 2 < nt:
            rhs -= op.lag2_t.dot(r[n + 2])
        r[n] = rhs / op.diag
    return r.ravel()


def restrict_vector(op, u, geom):
    uu = np.asarray(u).reshape(op.grid.nt, op.grid.nx, op.grid.nz)
    return ChannelData(uu[:, geom.rows, geom.cols].T, op.grid.dt)


def _inject(op, residual, geom):
    """``R^T`` applied to channel residuals ``[nc x nt]``."""
    g = np.zeros((op.grid.nt, op.grid.nx, op.grid.nz))
    g[:, geom.rows, geom.cols] = np.asarray(residual, float).T
    return g.ravel()


def _space_terms(op, uu):
    """Per-step ``(lap a, coupling a, Dx a, Dz a)`` for ``a = u[n-1]``, steps 2..nt-1."""
    grid = op.grid
    dx_m, dz_m, lap_m = operator_matrices(grid.nx, grid.nz, grid.dx)
    a = uu[1:-1]  # u[n-1] for n = 2..nt-1
    lap = lap_m.dot(a.T).T
    ax = dx_m.dot(a.T).T
    az = dz_m.dot(a.T).T
    gwx, gwz = grad(1.0 / op.density, grid.dx)
    coup = gwx.ravel() * ax + gwz.ravel() * az
    return lap, coup, ax, az


def fwi_gradient(op: LinearWaveOperator, u, residual, geom, method="fused"):
    """``dL/dtheta = -(dA/dtheta u)^T A^{-T} R^T (p - m)`` for sos, density and attenuation.

    ``method="per_cell"`` evaluates the formula literally, one property cell at a
    time, forming the full space-time vector ``(dA/dtheta_k) u`` for each cell.
    ``method="fused"`` accumulates all cells in one sweep.
    """
    grid = op.grid
    n0, nt = grid.n_cells, grid.nt
    res = residual.samples if isinstance(residual, ChannelData) else np.asarray(residual, float)
    if res.shape != (geom.nc, nt):
        raise ShapeMismatch(f"residual shape {res.shape} != {(geom.nc, nt)}")
    r = solve_adjoint(op, _inject(op, res, geom)).reshape(nt, n0)
    uu = np.asarray(u, float).reshape(nt, n0)
    if method == "fused":
        return _gradient_fused(op, uu, r)
    if method == "per_cell":
        return _gradient_per_cell(op, uu, r)
    raise ValueError(f"unknown method {method!r}")


def _gradient_fused(op, uu, r):
    grid = op.grid
    dt = grid.dt
    dx_m, dz_m, _ = operator_matrices(grid.nx, grid.nz, grid.dx)
    c, rho, d = op.sos.ravel(), op.density.ravel(), op.attenuation.ravel()
    lap, coup, ax, az = _space_terms(op, uu)
    rr = r[2:]
    a, b = uu[1:-1], uu[:-2]
    g_d = -np.sum(rr * ((2.0 / dt + 2.0 * d) * a - (2.0 / dt) * b), axis=0)
    s_coup = np.sum(rr * coup, axis=0)
    s_lap = np.sum(rr * lap, axis=0)
    g_c = 2.0 * c * rho * s_coup + 2.0 * c * s_lap
    k = c * c * rho
    w_bar = dx_m.T.dot(k * np.sum(rr * ax, axis=0)) + dz_m.T.dot(k * np.sum(rr * az, axis=0))
    g_rho = c * c * s_coup - w_bar / (rho * rho)
    shape = grid.shape
    return {"sos": g_c.reshape(shape), "density": g_rho.reshape(shape), "attenuation": g_d.reshape(shape)}


def _gradient_per_cell(op, uu, r):
    grid = op.grid
    dt = grid.dt
    n0, nt = grid.n_cells, grid.nt
    dx_m, dz_m, _ = operator_matrices(grid.nx, grid.nz, grid.dx)
    dx_c, dz_c = dx_m.tocsc(), dz_m.tocsc()
    c, rho, d = op.sos.ravel(), op.density.ravel(), op.attenuation.ravel()
    k = c * c * rho
    lap, coup, ax, az = _space_terms(op, uu)
    a, b = uu[1:-1], uu[:-2]
    rvec = r.ravel()
    out = {name: np.zeros(n0) for name in ("sos", "density", "attenuation")}
    steps = np.arange(2, nt) * n0
    v = np.zeros(nt * n0)  # one dense space-time vector, rewritten for every cell
    vv = v.reshape(nt, n0)
    for cell in range(n0):
        # dA/dc_k u : rows (n, k)
        v.fill(0.0)
        v[steps + cell] = -2.0 * c[cell] * rho[cell] * coup[:, cell] - 2.0 * c[cell] * lap[:, cell]
        out["sos"][cell] = -v.dot(rvec)

        v.fill(0.0)
        v[steps + cell] = (2.0 / dt + 2.0 * d[cell]) * a[:, cell] - (2.0 / dt) * b[:, cell]
        out["attenuation"][cell] = -v.dot(rvec)

        # density enters through K at row k and through grad(1/rho) at neighbouring rows
        v.fill(0.0)
        vv[2:, cell] -= c[cell] ** 2 * coup[:, cell]
        scale = 1.0 / rho[cell] ** 2
        for mat, deriv in ((dx_c, ax), (dz_c, az)):
            lo, hi = mat.indptr[cell], mat.indptr[cell + 1]
            for m, w in zip(mat.indices[lo:hi], mat.data[lo:hi]):
                vv[2:, m] += k[m] * w * deriv[:, m] * scale
        out["density"][cell] = -v.dot(rvec)
    return {name: g.reshape(grid.shape) for name, g in out.items()}


def forward_linear(props: PropertySet, pulse, grid, d_eff, max_unknowns=DEFAULT_MAX_UNKNOWNS):
    """Assemble and solve the linear model. Returns ``(operator, u)``."""
    check_cfl(props, grid)
    op = assemble_linear(props.sos, props.density, d_eff, grid, max_unknowns)
    return op, solve_wavefield(op, pulse_vector(pulse))
