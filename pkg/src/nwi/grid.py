"""Grid geometry, property maps, wavefields, channel data and the restriction operator.

Maps are arrays of shape ``(nx, nz)`` indexed ``[row, col]``: axis 0 is ``x``,
axis 1 is ``z``. The linear probe lies along one row (fixed ``x`` index, usually
the first row inside the absorbing layer), with elements spread over columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CflViolation, GridTooSmall, IndexOutOfGrid, InvalidInput, ShapeMismatch

PROPERTY_NAMES = ("sos", "density", "attenuation", "nonlinearity")


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SimulationGrid:
    nx: int
    nz: int
    nt: int
    dx: float
    dt: float

    def __post_init__(self):
        if self.nx < 3 or self.nz < 3:
            raise GridTooSmall(f"grid {self.nx}x{self.nz} needs at least 3x3 cells")
        if self.nt < 3:
            raise GridTooSmall(f"nt = {self.nt} needs at least 3 time steps")
        if not (self.dx > 0 and self.dt > 0):
            raise InvalidInput("dx and dt must be positive")

    @property
    def shape(self):
        return (self.nx, self.nz)

    @property
    def n_cells(self):
        return self.nx * self.nz

    def with_nt(self, nt):
        return SimulationGrid(self.nx, self.nz, nt, self.dx, self.dt)


@dataclass(frozen=True, eq=False)
class PropertySet:
    """The four material maps: sos (m/s), density (kg/m^3), attenuation (1/s), nonlinearity."""

    sos: np.ndarray
    density: np.ndarray
    attenuation: np.ndarray
    nonlinearity: np.ndarray

    def __post_init__(self):
        maps = {}
        for name in PROPERTY_NAMES:
            arr = _frozen(getattr(self, name))
            if arr.ndim != 2:
                raise ShapeMismatch(f"{name} map must be 2-D, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} map has non-finite entries")
            maps[name] = arr
        shape = maps["sos"].shape
        for name, arr in maps.items():
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} map shape {arr.shape} != sos shape {shape}")
        if np.any(maps["sos"] <= 0):
            raise InvalidInput("sos must be positive everywhere")
        if np.any(maps["density"] <= 0):
            raise InvalidInput("density must be positive everywhere")
        if np.any(maps["attenuation"] < 0):
            raise InvalidInput("attenuation must be non-negative")
        if np.any(maps["nonlinearity"] < 0):
            raise InvalidInput("nonlinearity must be non-negative")
        for name, arr in maps.items():
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, shape, sos=1480.0, density=1000.0, attenuation=0.0, nonlinearity=0.0):
        return cls(
            np.full(shape, sos, dtype=float),
            np.full(shape, density, dtype=float),
            np.full(shape, attenuation, dtype=float),
            np.full(shape, nonlinearity, dtype=float),
        )

    @classmethod
    def from_dict(cls, maps):
        return cls(**{name: maps[name] for name in PROPERTY_NAMES})

    @property
    def shape(self):
        return self.sos.shape

    def as_dict(self):
        return {name: getattr(self, name) for name in PROPERTY_NAMES}

    def replace(self, **maps):
        current = self.as_dict()
        current.update(maps)
        return PropertySet.from_dict(current)

    def equals(self, other):
        """Bitwise equality of all four maps."""
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PROPERTY_NAMES)


@dataclass(eq=False)
class Wavefield:
    pressure: np.ndarray
    grid: SimulationGrid

    def __post_init__(self):
        expected = (self.grid.nx, self.grid.nz, self.grid.nt)
        if self.pressure.shape != expected:
            raise ShapeMismatch(f"wavefield shape {self.pressure.shape} != {expected}")
        if not np.all(np.isfinite(self.pressure)):
            raise InvalidInput("wavefield has non-finite values")


@dataclass(frozen=True, eq=False)
class ChannelData:
    samples: np.ndarray
    dt: float

    def __post_init__(self):
        arr = _frozen(self.samples)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ShapeMismatch(f"channel data must be [nc x nt], got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("channel data has non-finite samples")
        object.__setattr__(self, "samples", arr)

    @property
    def nc(self):
        return self.samples.shape[0]

    @property
    def nt(self):
        return self.samples.shape[1]

    def __sub__(self, other):
        return ChannelData(self.samples - other.samples, self.dt)


@dataclass(frozen=True)
class ProbeGeometry:
    """Linear array: element cells on one grid row, strictly increasing in column."""

    element_cells: tuple
    pitch_cells: int = 1

    def __post_init__(self):
        cells = tuple((int(r), int(c)) for r, c in self.element_cells)
        if not cells:
            raise InvalidInput("probe needs at least one element")
        rows = {r for r, _ in cells}
        if len(rows) != 1:
            raise InvalidInput("linear array elements must all lie on one row")
        cols = [c for _, c in cells]
        if any(b <= a for a, b in zip(cols, cols[1:])):
            raise InvalidInput("element columns must be strictly increasing (no duplicates)")
        object.__setattr__(self, "element_cells", cells)

    @classmethod
    def linear(cls, grid, nc, pitch_cells=1, row=0, first_col=None):
        """``nc`` elements spaced ``pitch_cells`` apart, centred laterally by default."""
        span = (nc - 1) * pitch_cells
        if first_col is None:
            first_col = (grid.nz - 1 - span) // 2
        geom = cls(tuple((row, first_col + k * pitch_cells) for k in range(nc)), pitch_cells)
        geom.check_inside(grid.shape)
        return geom

    @property
    def nc(self):
        return len(self.element_cells)

    @property
    def row(self):
        return self.element_cells[0][0]

    @property
    def rows(self):
        return np.array([r for r, _ in self.element_cells], dtype=np.intp)

    @property
    def cols(self):
        return np.array([c for _, c in self.element_cells], dtype=np.intp)

    def lateral_positions(self, dx):
        """Element column positions in meters."""
        return self.cols.astype(float) * dx

    def check_inside(self, shape):
        nx, nz = shape
        for r, c in self.element_cells:
            if not (0 <= r < nx and 0 <= c < nz):
                raise IndexOutOfGrid(f"element cell ({r}, {c}) outside grid {nx}x{nz}")


def courant_number(props: PropertySet, grid: SimulationGrid) -> float:
    return float(np.max(props.sos)) * grid.dt / grid.dx


def check_cfl(props: PropertySet, grid: SimulationGrid) -> float:
    """Return the Courant number, raising :class:`CflViolation` when it exceeds 1."""
    cr = courant_number(props, grid)
    if cr > 1.0:
        raise CflViolation(cr, max_dt=grid.dx / float(np.max(props.sos)))
    return cr


def restrict(field_or_pressure, geom: ProbeGeometry, dt=None) -> ChannelData:
    """Gather the pressure at the element cells for every time step."""
    if isinstance(field_or_pressure, Wavefield):
        pressure = field_or_pressure.pressure
        dt = field_or_pressure.grid.dt
    else:
        pressure = np.asarray(field_or_pressure)
    geom.check_inside(pressure.shape[:2])
    return ChannelData(pressure[geom.rows, geom.cols, :], dt)


@dataclass(frozen=True, eq=False)
class PulseField:
    """Exterior force, stored compactly as one trace per active element cell.

    ``traces[k, n]`` is the force applied at ``(rows[k], cols[k])`` at step ``n``;
    the dense ``[nx x nz x nt]`` tensor is available through :attr:`force`.
    """

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    traces: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.intp).copy()
        cols = np.asarray(self.cols, dtype=np.intp).copy()
        traces = _frozen(np.atleast_2d(self.traces))
        if traces.shape[0] != rows.size or rows.size != cols.size:
            raise ShapeMismatch("one trace per active cell is required")
        if len(set(zip(rows.tolist(), cols.tolist()))) != rows.size:
            raise InvalidInput("active cells of a pulse must be distinct")
        nx, nz, _ = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= nx or cols.min() < 0 or cols.max() >= nz):
            raise IndexOutOfGrid("pulse cell outside the grid")
        if traces.shape[1] != self.shape[2]:
            raise ShapeMismatch(f"trace length {traces.shape[1]} != nt {self.shape[2]}")
        rows.flags.writeable = False
        cols.flags.writeable = False
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "traces", traces)

    @classmethod
    def zeros(cls, grid):
        return cls((grid.nx, grid.nz, grid.nt), np.zeros(0, int), np.zeros(0, int), np.zeros((0, grid.nt)))

    @classmethod
    def point(cls, grid, cell, trace):
        return cls((grid.nx, grid.nz, grid.nt), [cell[0]], [cell[1]], np.asarray(trace, float)[None, :])

    @property
    def nt(self):
        return self.shape[2]

    @property
    def force(self):
        out = np.zeros(self.shape)
        out[self.rows, self.cols, :] = self.traces
        return out

    def scaled(self, factor):
        return PulseField(self.shape, self.rows, self.cols, self.traces * factor)

    def __add__(self, other):
        merged = {}
        for p in (self, other):
            for r, c, tr in zip(p.rows.tolist(), p.cols.tolist(), p.traces):
                merged[(r, c)] = merged.get((r, c), 0.0) + tr
        keys = sorted(merged)
        traces = np.array([merged[k] for k in keys]) if keys else np.zeros((0, self.nt))
        return PulseField(self.shape, [k[0] for k in keys], [k[1] for k in keys], traces)
