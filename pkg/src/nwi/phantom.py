"""Phantom construction, normalised RMSE scoring and map export."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBounds, InvalidGeometry, InvalidInput, ShapeMismatch
from .grid import PROPERTY_NAMES, PropertySet
from . import io

# Tissue tuples are (sos m/s, density kg/m^3, attenuation 1/s, nonlinearity).
# Only water sos/density and the fat nonlinearity are literature anchors; the rest
# are representative handbook-scale values shipped as a preset.
TISSUES = {
    "water": (1480.0, 1000.0, 0.0, 0.0),
    "water-physical": (1480.0, 1000.0, 0.0, 3.5),
    "fat": (1478.0, 950.0, 1.5e4, 6.0),
    "liver": (1570.0, 1060.0, 1.36e4, 6.8),
}


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple

    def contains(self, x, z):
        (cx, cz), (ax, az) = self.center, self.semi_axes
        return ((x - cx) / ax) ** 2 + ((z - cz) / az) ** 2 <= 1.0

    def bbox(self):
        (cx, cz), (ax, az) = self.center, self.semi_axes
        return cx - ax, cz - az, cx + ax, cz + az


@dataclass(frozen=True)
class Rectangle:
    corner: tuple
    size: tuple

    def contains(self, x, z):
        (x0, z0), (sx, sz) = self.corner, self.size
        return (x >= x0) & (x <= x0 + sx) & (z >= z0) & (z <= z0 + sz)

    def bbox(self):
        (x0, z0), (sx, sz) = self.corner, self.size
        return x0, z0, x0 + sx, z0 + sz


@dataclass(frozen=True)
class Inclusion:
    shape: object
    properties: tuple


@dataclass(frozen=True)
class PhantomSpec:
    """Background medium plus inclusions; positions and sizes in meters, ``(x, z)`` order."""

    extent: tuple
    background: tuple = TISSUES["water"]
    inclusions: tuple = ()

    def __post_init__(self):
        ex, ez = self.extent
        if not (ex > 0 and ez > 0):
            raise InvalidGeometry("phantom extent must be positive")
        _check_tuple(self.background)
        for inc in self.inclusions:
            _check_tuple(inc.properties)
            sizes = inc.shape.semi_axes if isinstance(inc.shape, Ellipse) else inc.shape.size
            if min(sizes) <= 0:
                raise InvalidGeometry("inclusion sizes must be positive")
            x0, z0, x1, z1 = inc.shape.bbox()
            if x0 < 0 or z0 < 0 or x1 > ex or z1 > ez:
                raise InvalidGeometry(f"inclusion {inc.shape} leaves the {ex} x {ez} m extent")


def _check_tuple(t):
    if len(t) != 4:
        raise InvalidInput("property tuples are (sos, density, attenuation, nonlinearity)")
    c, q, d, b = t
    if not (c > 0 and q > 0 and d >= 0 and b >= 0):
        raise InvalidInput(f"property tuple {t} is outside physical bounds")


def make_phantom(spec: PhantomSpec, grid) -> PropertySet:
    """Sample the phantom description at cell centres; the last inclusion containing a centre wins."""
    for ext, n in zip(spec.extent, grid.shape):
        if not math.isclose(ext / n, grid.dx, rel_tol=1e-9):
            raise InvalidGeometry(f"extent {ext} m over {n} cells is not dx = {grid.dx} m")
    x = (np.arange(grid.nx) + 0.5) * grid.dx
    z = (np.arange(grid.nz) + 0.5) * grid.dx
    xx, zz = np.meshgrid(x, z, indexing="ij")
    maps = [np.full(grid.shape, v, dtype=float) for v in spec.background]
    for inc in spec.inclusions:
        inside = inc.shape.contains(xx, zz)
        for m, v in zip(maps, inc.properties):
            m[inside] = v
    return PropertySet(*maps)


def two_inclusion_spec(grid, background="water", left="fat", right="liver", depth_frac=0.55,
                       radius_frac=0.14):
    """Water with a fat disc on the left and a liver disc on the right."""
    ex, ez = grid.nx * grid.dx, grid.nz * grid.dx
    r = radius_frac * min(ex, ez)
    cx = depth_frac * ex
    incs = (
        Inclusion(Ellipse((cx, 0.32 * ez), (r, r)), TISSUES[left]),
        Inclusion(Ellipse((cx, 0.68 * ez), (r, r)), TISSUES[right]),
    )
    return PhantomSpec((ex, ez), TISSUES[background], incs)


@dataclass(frozen=True)
class PropertyBounds:
    """Known value range per property used to normalise the RMSE."""

    sos: tuple = (1400.0, 1650.0)
    density: tuple = (900.0, 1100.0)
    attenuation: tuple = (0.0, 5e4)
    nonlinearity: tuple = (0.0, 10.0)

    def __post_init__(self):
        for name in PROPERTY_NAMES:
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise DegenerateBounds(f"bounds for {name} need max > min, got ({lo}, {hi})")

    def of(self, name):
        return getattr(self, name)


def interior_mask(shape, pml_width):
    """True away from the absorbing layer."""
    m = np.zeros(shape, bool)
    w = pml_width
    m[w:shape[0] - w, w:shape[1] - w] = True
    return m


def nrmse(est, truth, bounds, mask=None) -> float:
    """``sqrt(mean((est - truth)^2)) / (max - min)``, optionally over ``mask`` cells only."""
    lo, hi = bounds
    if not hi > lo:
        raise DegenerateBounds(f"bounds ({lo}, {hi}) have no range")
    e, t = np.asarray(est, float), np.asarray(truth, float)
    if e.shape != t.shape:
        raise ShapeMismatch(f"estimate {e.shape} vs truth {t.shape}")
    diff = e - t
    if mask is not None:
        diff = diff[np.asarray(mask, bool)]
    if diff.size == 0:
        raise InvalidInput("nrmse over an empty region")
    return float(math.sqrt(np.sum(diff * diff) / diff.size) / (hi - lo))


def nrmse_table(est: PropertySet, truth: PropertySet, bounds: PropertyBounds, mask=None):
    return {n: nrmse(getattr(est, n), getattr(truth, n), bounds.of(n), mask) for n in PROPERTY_NAMES}


def export_map(values, bounds, path, fmt, kind="other"):
    if fmt == "csv":
        io.write_csv(path, values)
    elif fmt == "pgm":
        io.write_pgm(path, values, *bounds)
    elif fmt == "nwimap":
        io.write_nwimap(path, values, kind)
    else:
        raise InvalidInput(f"unknown export format {fmt!r}")
