"""Explicit time stepping of the discrete lossy Westervelt equation with a PML.

One step maps ``(U[n-1], U[n-2], F[n])`` to ``U[n]``::

    G1 = (1 + 2 B U[n-1] / (C^2 Q)) / dt^2
    U[n] = 2 U[n-1] - U[n-2] + h / G1
    h = -(D^2 + 2D/dt) U[n-1] + (2D/dt) U[n-2] - (2/dt^2) B/(C^2 Q) (U[n-1] - U[n-2])^2
        + C^2 Q grad(1/Q) . grad(U[n-1]) + C^2 lap(U[n-1]) + F[n]

which is the recurrence ``U[n] = (G2 U[n-1] + G3 U[n-2] + G4 (U[n-1]-U[n-2])^2 + ...)/G1``
with ``G2 = 2 G1 - D^2 - 2D/dt``, ``G3 = -G1 + 2D/dt``, ``G4 = -(2/dt^2) B/(C^2 Q)``.
``D`` is always the effective attenuation (physical plus PML).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FieldDiverged, InvalidInput, NonlinearityBlowup, NyquistViolation, PmlTooWide, ShapeMismatch
from .grid import ChannelData, PropertySet, PulseField, SimulationGrid, Wavefield, check_cfl
from .stencils import grad, laplacian

DEFAULT_FIELD_CAP = 1e12
DEFAULT_EPS_G = 1e-3  # fraction of 1/dt^2


@dataclass(frozen=True)
class PmlConfig:
    width_cells: int = 0
    d_max: float = 0.0

    def __post_init__(self):
        if self.width_cells < 0 or self.d_max < 0:
            raise InvalidInput("PML width and d_max must be non-negative")

    @classmethod
    def tuned(cls, grid, width_cells, sos=1480.0, attenuation_db=60.0, max_step_damping=0.25):
        """Quadratic layer giving ``attenuation_db`` round-trip loss at normal incidence.

        The continuous round-trip decay is ``exp(-2 d_max L / (3 c))``. ``d_max * dt`` is
        capped at ``max_step_damping`` because the damped leapfrog loses stability
        when the per-step damping gets large.
        """
        if width_cells == 0:
            return cls(0, 0.0)
        depth = width_cells * grid.dx
        d_max = 3.0 * sos * (attenuation_db / 20.0 * math.log(10.0)) / (2.0 * depth)
        return cls(width_cells, min(d_max, max_step_damping / grid.dt))


def pml_profile(grid: SimulationGrid, pml: PmlConfig) -> np.ndarray:
    """Artificial attenuation map: ``d_max (l / L)^2``, peaking at the outer grid edge."""
    w = pml.width_cells
    if w == 0:
        return np.zeros(grid.shape)
    if 2 * w >= min(grid.nx, grid.nz):
        raise PmlTooWide(f"PML width {w} leaves no interior in a {grid.nx}x{grid.nz} grid")

    def axis_depth(n):
        i = np.arange(n)
        cells_in = np.maximum(w - i, 0) + np.maximum(i - (n - 1 - w), 0)
        return cells_in / w

    lx = axis_depth(grid.nx)[:, None]
    lz = axis_depth(grid.nz)[None, :]
    return pml.d_max * np.maximum(lx, lz) ** 2


def effective_attenuation(props: PropertySet, pml_map) -> np.ndarray:
    if np.shape(pml_map) != props.shape:
        raise ShapeMismatch(f"PML map {np.shape(pml_map)} != property shape {props.shape}")
    return props.attenuation + pml_map


class StepContext:
    """Property-dependent pieces of the step that stay fixed over time."""

    def __init__(self, props: PropertySet, d_eff, grid: SimulationGrid, eps_g=DEFAULT_EPS_G, field_cap=DEFAULT_FIELD_CAP):
        c, q, b = props.sos, props.density, props.nonlinearity
        d = np.asarray(d_eff, dtype=float)
        if d.shape != props.shape:
            raise ShapeMismatch("effective attenuation map does not match the property maps")
        self.grid = grid
        self.dt = grid.dt
        self.inv_dt2 = 1.0 / (grid.dt * grid.dt)
        self.c2 = c * c
        self.k = self.c2 * q
        self.b_over_k = b / self.k
        self.g1_slope = 2.0 * self.inv_dt2 * self.b_over_k
        self.g4 = -2.0 * self.inv_dt2 * self.b_over_k
        self.d = d
        self.alpha = -(d * d + 2.0 * d / grid.dt)
        self.beta = 2.0 * d / grid.dt
        self.gwx, self.gwz = grad(1.0 / q, grid.dx)
        self.has_coupling = bool(np.any(self.gwx) or np.any(self.gwz))
        self.nonlinear = bool(np.any(b))
        self.eps_g = eps_g * self.inv_dt2
        self.field_cap = field_cap

    def g1(self, a):
        return self.inv_dt2 + self.g1_slope * a

    def rhs(self, a, b, f=None):
        """Return ``(h, coupling, lap)`` for history slices ``a = U[n-1]``, ``b = U[n-2]``."""
        dx = self.grid.dx
        lap = laplacian(a, dx)
        h = self.alpha * a + self.beta * b + self.c2 * lap
        if self.nonlinear:
            e = a - b
            h += self.g4 * (e * e)
        coup = None
        if self.has_coupling:
            ax, az = grad(a, dx)
            coup = self.gwx * ax + self.gwz * az
            h += self.k * coup
        if f is not None:
            h += f
        return h, coup, lap

    def step(self, a, b, f=None):
        """Return ``(U[n], G1)``; raises on an invalid or diverging step."""
        g1 = self.g1(a)
        if self.nonlinear and np.min(g1) <= self.eps_g:
            raise NonlinearityBlowup(f"G1 fell to {np.min(g1):.3g} (floor {self.eps_g:.3g})")
        h, _, _ = self.rhs(a, b, f)
        u = 2.0 * a - b + h / g1
        peak = np.max(np.abs(u))
        if not peak <= self.field_cap:
            raise FieldDiverged(f"|U| reached {peak:.3g} Pa (cap {self.field_cap:.3g})")
        return u, g1

    def coefficients(self, a):
        """The ``(G1, G2, G3, G4)`` maps for ``U[n-1] = a``."""
        g1 = self.g1(a)
        g2 = 2.0 * g1 - self.d * self.d - 2.0 * self.d / self.dt
        g3 = -g1 + 2.0 * self.d / self.dt
        return g1, g2, g3, np.broadcast_to(self.g4, g1.shape)


def step_coefficients(u_prev, props, d_eff, grid):
    return StepContext(props, d_eff, grid).coefficients(np.asarray(u_prev, float))


def westervelt_step(u_prev, u_prev2, props, d_eff, f_now, grid, eps_g=DEFAULT_EPS_G, field_cap=DEFAULT_FIELD_CAP):
    """Advance one time step. Convenience wrapper; loops should reuse a :class:`StepContext`."""
    ctx = StepContext(props, d_eff, grid, eps_g=eps_g, field_cap=field_cap)
    a, b, f = (np.asarray(x, dtype=float) for x in (u_prev, u_prev2, f_now))
    if not (a.shape == b.shape == f.shape == props.shape):
        raise ShapeMismatch("step inputs must share the property map shape")
    return ctx.step(a, b, f)[0]


def _forcing(pulse: PulseField, n, shape, out):
    out.fill(0.0)
    if pulse.rows.size:
        out[pulse.rows, pulse.cols] = pulse.traces[:, n]
    return out


def run(props, pulse, grid, pml=None, geom=None, *, keep_history=False, d_eff=None,
        eps_g=DEFAULT_EPS_G, field_cap=DEFAULT_FIELD_CAP):
    """Shared driver. Returns ``(history or None, channels or None, g1 history or None, ctx)``.

    ``history`` is time-major ``[nt, nx, nz]``. Pulse samples ``F[0]`` and ``F[1]`` are
    ignored: the field starts at rest and the first computed step is ``n = 2``.
    """
    check_cfl(props, grid)
    if pulse.shape != (grid.nx, grid.nz, grid.nt):
        raise ShapeMismatch(f"pulse shape {pulse.shape} != grid {(grid.nx, grid.nz, grid.nt)}")
    if d_eff is None:
        d_eff = effective_attenuation(props, pml_profile(grid, pml or PmlConfig()))
    ctx = StepContext(props, d_eff, grid, eps_g=eps_g, field_cap=field_cap)
    nt = grid.nt
    channels = None
    if geom is not None:
        geom.check_inside(grid.shape)
        rows, cols = geom.rows, geom.cols
        channels = np.zeros((geom.nc, nt))
    history = np.zeros((nt, grid.nx, grid.nz)) if keep_history else None
    g1_hist = np.zeros((nt, grid.nx, grid.nz)) if keep_history else None
    b = np.zeros(grid.shape)
    a = np.zeros(grid.shape)
    f = np.zeros(grid.shape)
    for n in range(2, nt):
        try:
            u, g1 = ctx.step(a, b, _forcing(pulse, n, grid.shape, f))
        except (NonlinearityBlowup, FieldDiverged) as exc:
            raise exc.at_step(n)
        if keep_history:
            history[n] = u
            g1_hist[n] = g1
        if channels is not None:
            channels[:, n] = u[rows, cols]
        b, a = a, u
    return history, channels, g1_hist, ctx


def simulate(props, pulse, grid, pml=None, geom=None, record="channels", **kw):
    """Run the forward model; ``record`` is ``"full"`` (Wavefield) or ``"channels"``."""
    if record == "full":
        history, _, _, _ = run(props, pulse, grid, pml, None, keep_history=True, **kw)
        return Wavefield(np.moveaxis(history, 0, -1), grid)
    if record == "channels":
        if geom is None:
            raise InvalidInput("record='channels' needs a probe geometry")
        _, channels, _, _ = run(props, pulse, grid, pml, geom, **kw)
        return ChannelData(channels, grid.dt)
    raise InvalidInput(f"unknown record mode {record!r}")


def _band_power(spec, freqs, center, rel_width=0.1):
    sel = np.abs(freqs - center) <= rel_width * center
    return spec[..., sel].sum(axis=-1)


def second_harmonic_ratio(ch: ChannelData, f0: float) -> float:
    """Power near ``2 f0`` over power near ``f0`` (+-10% bands), averaged over channels."""
    nyquist = 0.5 / ch.dt
    if 2.0 * f0 >= nyquist:
        raise NyquistViolation(f"2 f0 = {2.0 * f0:.3g} Hz is not below Nyquist ({nyquist:.3g} Hz)")
    freqs = np.fft.rfftfreq(ch.nt, ch.dt)
    spec = np.abs(np.fft.rfft(ch.samples, axis=-1)) ** 2
    fund = _band_power(spec, freqs, f0)
    harm = _band_power(spec, freqs, 2.0 * f0)
    ok = fund > 0
    if not np.any(ok):
        return 0.0
    return float(np.mean(harm[ok] / fund[ok]))
