"""Transmit pulses for a linear array, emission sequencing and measurement noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ApertureOutOfArray, InvalidInput, ZeroSignal
from .grid import ChannelData, PulseField
from .solver import simulate

WATER_SOS = 1480.0
BODY_SOS = 1540.0


@dataclass(frozen=True)
class Waveform:
    """Gaussian-modulated sinusoid ``A sin(2 pi f0 (t - t0)) exp(-(t - t0)^2 / (2 sigma^2))``.

    ``sigma = cycles / (4 f0)`` and the pulse is cut to zero beyond ``4 sigma`` from
    its centre ``t0`` (default ``4 sigma``), so it has finite support.
    """

    f0: float = 4e6
    cycles: float = 3.0
    amplitude: float = 1.0
    t0: float | None = None

    @property
    def sigma(self):
        return self.cycles / (4.0 * self.f0)

    @property
    def center(self):
        return 4.0 * self.sigma if self.t0 is None else self.t0

    @property
    def support(self):
        return 4.0 * self.sigma

    def __call__(self, t):
        x = np.asarray(t, float) - self.center
        env = np.exp(-0.5 * (x / self.sigma) ** 2)
        s = self.amplitude * np.sin(2.0 * np.pi * self.f0 * x) * env
        return np.where(np.abs(x) <= self.support, s, 0.0)

    def with_center(self, t0):
        return Waveform(self.f0, self.cycles, self.amplitude, t0)


@dataclass(frozen=True)
class EmissionPlan:
    n_emissions: int = 16
    aperture_elements: int = 16
    stride_elements: int = 4
    waveform: Waveform = Waveform()
    focus_depth: float = 5e-3
    assumed_sos: float = WATER_SOS

    def validate(self, nc, dt=None):
        if self.n_emissions < 1 or self.aperture_elements < 1 or self.stride_elements < 0:
            raise InvalidInput("emission counts must be positive")
        if self.aperture_elements + (self.n_emissions - 1) * self.stride_elements > nc:
            raise ApertureOutOfArray(
                f"{self.n_emissions} emissions of {self.aperture_elements} elements with stride "
                f"{self.stride_elements} need more than {nc} elements"
            )
        if dt is not None and self.waveform.f0 >= 0.5 / dt:
            raise InvalidInput(f"f0 = {self.waveform.f0:.3g} Hz is above Nyquist for dt = {dt:.3g} s")

    def active_elements(self, emission_index):
        if not 0 <= emission_index < self.n_emissions:
            raise ApertureOutOfArray(f"emission {emission_index} not in [0, {self.n_emissions})")
        start = emission_index * self.stride_elements
        return np.arange(start, start + self.aperture_elements)


def focal_delays(plan: EmissionPlan, element_lateral_offsets):
    """``tau_j = (P - sqrt(P^2 + d_j^2)) / c``; zero at the aperture centre, negative elsewhere."""
    if plan.assumed_sos <= 0 or plan.focus_depth <= 0:
        raise InvalidInput("focus depth and assumed sos must be positive")
    d = np.asarray(element_lateral_offsets, float)
    p = plan.focus_depth
    return (p - np.sqrt(p * p + d * d)) / plan.assumed_sos


def max_focal_advance(plan: EmissionPlan, pitch):
    """Largest ``|tau|`` over an aperture with element spacing ``pitch`` (meters)."""
    half = 0.5 * (plan.aperture_elements - 1) * pitch
    return float(-focal_delays(plan, [half])[0])


def _pulse_from_delays(waveform, geom, grid, element_idx, delays):
    t = np.arange(grid.nt) * grid.dt
    traces = np.array([waveform(t - tau) for tau in delays]) if len(delays) else np.zeros((0, grid.nt))
    rows = geom.rows[element_idx]
    cols = geom.cols[element_idx]
    return PulseField((grid.nx, grid.nz, grid.nt), rows, cols, traces)


def synthesize_focused(plan: EmissionPlan, geom, grid, emission_index):
    """Focused beam from the ``emission_index``-th aperture: ``F[x_j, z_j, n] = s(n dt - tau_j)``."""
    idx = plan.active_elements(emission_index)
    if idx[-1] >= geom.nc:
        raise ApertureOutOfArray(f"aperture ends at element {idx[-1]} but the probe has {geom.nc}")
    x = geom.lateral_positions(grid.dx)[idx]
    offsets = x - 0.5 * (x[0] + x[-1])
    return _pulse_from_delays(plan.waveform, geom, grid, idx, focal_delays(plan, offsets))


def plane_delays(geom, dx, steer_angle, assumed_sos=WATER_SOS):
    if not abs(steer_angle) < math.pi / 2:
        raise InvalidInput("steering angle must be inside (-pi/2, pi/2)")
    x = geom.lateral_positions(dx)
    x = x - 0.5 * (x[0] + x[-1])
    return x * math.sin(steer_angle) / assumed_sos


def synthesize_plane(waveform: Waveform, geom, grid, steer_angle, assumed_sos=WATER_SOS):
    """Plane wave over the full array steered by ``steer_angle`` (radians)."""
    delays = plane_delays(geom, grid.dx, steer_angle, assumed_sos)
    return _pulse_from_delays(waveform, geom, grid, np.arange(geom.nc), delays)


def synthesize_diverging(*_args, **_kwargs):
    """Diverging-wave transmit. No delay law is defined for it here yet."""
    raise NotImplementedError("diverging-wave synthesis has no defined delay law")


def add_noise(ch: ChannelData, snr, seed):
    """Add zero-mean white Gaussian noise with power ``mean(signal^2) / snr`` (linear ratio)."""
    if snr == math.inf:
        return ch
    if not snr > 0:
        raise InvalidInput("snr must be positive")
    power = float(np.mean(ch.samples**2))
    if power == 0.0:
        raise ZeroSignal("cannot scale noise to a zero signal")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(power / snr), size=ch.samples.shape)
    return ChannelData(ch.samples + noise, ch.dt)


def snr_from_db(db):
    return 10.0 ** (db / 10.0)


def emission_seeds(seed, n):
    """Independent per-emission seeds derived from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def acquire_sequence(props_true, plan: EmissionPlan, geom, grid, pml, snr, seed):
    """Simulate every emission of ``plan`` on the true medium. Returns ``[(pulse, data), ...]``."""
    plan.validate(geom.nc, grid.dt)
    seeds = emission_seeds(seed, plan.n_emissions)
    out = []
    for index in range(plan.n_emissions):
        pulse = synthesize_focused(plan, geom, grid, index)
        clean = simulate(props_true, pulse, grid, pml, geom, record="channels")
        out.append((pulse, add_noise(clean, snr, seeds[index])))
    return out
