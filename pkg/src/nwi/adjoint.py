"""Reverse-mode gradients through the unrolled time-stepping recurrence.

The forward pass stores every pressure slice (and the ``G1`` maps). The reverse pass
walks the steps backwards, carrying the adjoints of the two history slices, and
accumulates the sensitivities of every property-dependent coefficient. Those
per-coefficient sums are chained into ``dL/dC``, ``dL/dQ``, ``dL/dD`` and ``dL/dB``
once at the end, so the whole pass costs ``O(nx nz nt)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonlinearityBlowup, ShapeMismatch, TapeMemoryExceeded
from .grid import PROPERTY_NAMES, ChannelData, PropertySet, SimulationGrid
from .solver import PmlConfig, _forcing, effective_attenuation, pml_profile, run
from .stencils import grad, transposed_operators

DEFAULT_TAPE_BUDGET = 2 * 1024**3  # bytes


@dataclass(frozen=True, eq=False)
class PropertyGradients:
    d_sos: np.ndarray
    d_density: np.ndarray
    d_attenuation: np.ndarray
    d_nonlinearity: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(*(np.zeros(shape) for _ in range(4)))

    def as_dict(self):
        return {
            "sos": self.d_sos,
            "density": self.d_density,
            "attenuation": self.d_attenuation,
            "nonlinearity": self.d_nonlinearity,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[name], float) for name in PROPERTY_NAMES))

    def __add__(self, other):
        a, b = self.as_dict(), other.as_dict()
        return PropertyGradients.from_dict({k: a[k] + b[k] for k in PROPERTY_NAMES})

    def scaled(self, s):
        return PropertyGradients.from_dict({k: v * s for k, v in self.as_dict().items()})

    def max_abs(self):
        return max(float(np.max(np.abs(v))) for v in self.as_dict().values())


@dataclass(eq=False)
class Tape:
    """Forward history needed by the reverse pass (time-major ``[nt, nx, nz]``)."""

    history: np.ndarray
    g1: np.ndarray
    props: PropertySet
    pulse: object
    d_eff: np.ndarray
    grid: SimulationGrid
    geom: object
    ctx: object

    def __post_init__(self):
        if self.history.shape[0] != self.grid.nt:
            raise ShapeMismatch("tape length differs from nt")
        self.history.flags.writeable = False
        self.g1.flags.writeable = False


def forward_with_tape(props, pulse, grid, pml=None, geom=None, *, d_eff=None,
                      memory_budget=DEFAULT_TAPE_BUDGET, **kw):
    """Forward simulation that keeps the full history. Returns ``(ChannelData, Tape)``."""
    need = 2 * grid.nt * grid.n_cells * 8
    if need > memory_budget:
        raise TapeMemoryExceeded(f"tape needs {need / 2**20:.1f} MiB, budget {memory_budget / 2**20:.1f} MiB")
    if d_eff is None:
        d_eff = effective_attenuation(props, pml_profile(grid, pml or PmlConfig()))
    history, _, g1, ctx = run(props, pulse, grid, None, None, keep_history=True, d_eff=d_eff, **kw)
    # Gathering from the stored slices yields the same numbers as the channel recorder.
    channels = ChannelData(history[:, geom.rows, geom.cols].T, grid.dt)
    return channels, Tape(history, g1, props, pulse, np.asarray(d_eff), grid, geom, ctx)


def backprop(tape: Tape, data_residual) -> PropertyGradients:
    """Gradients of ``0.5 * ||P - M||_F^2`` given ``data_residual = P - M``."""
    res = data_residual.samples if isinstance(data_residual, ChannelData) else np.asarray(data_residual, float)
    geom, grid, ctx = tape.geom, tape.grid, tape.ctx
    if res.shape != (geom.nc, grid.nt):
        raise ShapeMismatch(f"residual shape {res.shape} != {(geom.nc, grid.nt)}")
    shape = grid.shape
    rows, cols = geom.rows, geom.cols
    dxt, dzt, lt = transposed_operators(grid.nx, grid.nz, grid.dx)
    hist = tape.history

    # per-coefficient accumulators
    s_g1a = np.zeros(shape)  # sum of G1-bar * U[n-1]
    s_e2 = np.zeros(shape)  # sum of h-bar * (U[n-1] - U[n-2])^2
    s_ha = np.zeros(shape)
    s_hb = np.zeros(shape)
    s_coup = np.zeros(shape)
    s_lap = np.zeros(shape)
    s_gwx = np.zeros(shape)
    s_gwz = np.zeros(shape)

    f = np.zeros(shape)
    carry_n = np.zeros(shape)  # adjoint reaching U[n] from later steps
    carry_n1 = np.zeros(shape)  # adjoint reaching U[n-1] from later steps
    for n in range(grid.nt - 1, 1, -1):
        lam = carry_n
        lam[rows, cols] += res[:, n]
        a, b = hist[n - 1], hist[n - 2]
        g1 = tape.g1[n]
        if ctx.nonlinear and np.min(g1) <= ctx.eps_g:
            raise NonlinearityBlowup("G1 floor hit in reverse pass", step=n)
        h, coup, lap = ctx.rhs(a, b, _forcing(tape.pulse, n, shape, f))
        hbar = lam / g1
        g1bar = -hbar * h / g1

        ga = 2.0 * lam + hbar * ctx.alpha
        gb = -lam + hbar * ctx.beta
        s_ha += hbar * a
        s_hb += hbar * b
        s_lap += hbar * lap
        ga += lt.dot((hbar * ctx.c2).ravel()).reshape(shape)
        # B-sensitivities are needed even where B = 0
        e = a - b
        s_g1a += g1bar * a
        s_e2 += hbar * e * e
        if ctx.nonlinear:
            ga += g1bar * ctx.g1_slope
            t = hbar * ctx.g4 * 2.0 * e
            ga += t
            gb -= t
        if ctx.has_coupling:
            s_coup += hbar * coup
            cb = hbar * ctx.k
            ax, az = grad(a, grid.dx)
            s_gwx += cb * ax
            s_gwz += cb * az
            ga += (dxt.dot((cb * ctx.gwx).ravel()) + dzt.dot((cb * ctx.gwz).ravel())).reshape(shape)
        carry_n = carry_n1 + ga
        carry_n1 = gb

    props = tape.props
    c, q, bmap, d = props.sos, props.density, props.nonlinearity, tape.d_eff
    k = ctx.k
    two_idt2 = 2.0 * ctx.inv_dt2
    # G1 = idt2 + 2 idt2 B a / K ;  G4 = -2 idt2 B / K
    d_b = s_g1a * two_idt2 / k - s_e2 * two_idt2 / k
    d_k = s_coup - s_g1a * two_idt2 * bmap / (k * k) + s_e2 * two_idt2 * bmap / (k * k)
    d_c2 = s_lap
    d_d = s_ha * (-2.0 * d - 2.0 / grid.dt) + s_hb * (2.0 / grid.dt)
    d_w = (dxt.dot(s_gwx.ravel()) + dzt.dot(s_gwz.ravel())).reshape(shape)
    d_c = d_k * 2.0 * c * q + d_c2 * 2.0 * c
    d_q = d_k * c * c - d_w / (q * q)
    return PropertyGradients(d_c, d_q, d_d, d_b)

