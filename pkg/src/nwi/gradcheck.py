"""Finite-difference verification of the reverse-pass gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import PROPERTY_NAMES, PropertySet
from .inversion import LossConfig, loss_and_gradient, total_loss

DEFAULT_TOLERANCE = 1e-5


@dataclass
class PropertyCheck:
    name: str
    cells: list
    adjoint: np.ndarray
    finite_diff: np.ndarray

    @property
    def rel_errors(self):
        a, f = self.adjoint, self.finite_diff
        scale = np.maximum(np.abs(a), np.abs(f))
        return np.divide(np.abs(a - f), scale, out=np.zeros_like(scale), where=scale > 0)

    @property
    def max_rel(self):
        return float(self.rel_errors.max(initial=0.0))

    @property
    def mean_rel(self):
        return float(self.rel_errors.mean()) if self.rel_errors.size else 0.0


def smooth_random_props(shape, seed, ranges=None):
    """Heterogeneous maps with smooth variation inside the given ``(lo, hi)`` ranges."""
    ranges = ranges or {
        "sos": (1450.0, 1600.0),
        "density": (950.0, 1100.0),
        "attenuation": (2e3, 2e4),
        "nonlinearity": (3.0, 7.0),
    }
    rng = np.random.default_rng(seed)
    maps = {}
    for name in PROPERTY_NAMES:
        m = gaussian_filter(rng.random(shape), sigma=max(shape) / 8.0, mode="reflect")
        m = (m - m.min()) / (m.max() - m.min())
        lo, hi = ranges[name]
        maps[name] = lo + (hi - lo) * m
    return PropertySet.from_dict(maps)


def _choose_cells(grad_map, n_cells, rng, rel_floor=1e-2):
    """Random cells among those carrying a non-negligible share of the gradient."""
    flat = np.abs(grad_map).ravel()
    peak = flat.max(initial=0.0)
    if peak == 0.0:
        pool = np.arange(flat.size)
    else:
        pool = np.flatnonzero(flat >= rel_floor * peak)
    pick = rng.choice(pool, size=min(n_cells, pool.size), replace=False)
    return [tuple(int(i) for i in np.unravel_index(p, grad_map.shape)) for p in np.sort(pick)]


def finite_difference(loss_fn, props, name, cell, step):
    """Fourth-order central difference of ``loss_fn`` along one cell of one map."""
    base = getattr(props, name)

    def at(offset):
        m = np.array(base, copy=True)
        m[cell] += offset
        return loss_fn(props.replace(**{name: m}))

    return (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step)


def gradient_check(props, pulse, measured, physics, loss_cfg=LossConfig(), *, n_cells=20, seed=0,
                   rel_step=1e-4, gradient_fn=None):
    """Compare reverse-pass gradients with finite differences at sampled cells of every map.

    ``gradient_fn`` replaces :func:`loss_and_gradient` (used to check that the
    comparison really detects a wrong gradient).
    """
    fn = gradient_fn or loss_and_gradient
    _, grads, _ = fn(props, pulse, measured, loss_cfg, physics)
    grads = grads.as_dict()
    rng = np.random.default_rng(seed)

    def loss_fn(p):
        return total_loss(p, measured, pulse, loss_cfg, physics)

    report = {}
    for name in PROPERTY_NAMES:
        cells = _choose_cells(grads[name], n_cells, rng)
        m = getattr(props, name)
        scale = float(np.mean(np.abs(m))) or 1.0
        fd = []
        for cell in cells:
            step = rel_step * max(abs(float(m[cell])), scale)
            fd.append(finite_difference(loss_fn, props, name, cell, step))
        adj = np.array([grads[name][c] for c in cells])
        report[name] = PropertyCheck(name, cells, adj, np.array(fd))
    return report


def passed(report, tol=DEFAULT_TOLERANCE):
    return all(chk.max_rel < tol for chk in report.values())
