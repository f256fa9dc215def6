"""Wall-clock scaling of the reverse pass and of the matrix-based baseline gradient."""

from __future__ import annotations

import csv
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import DEFAULT_TAPE_BUDGET, backprop, forward_with_tape
from .errors import BudgetExceeded, InvalidInput, ProblemTooLarge
from .fwi import DEFAULT_MAX_UNKNOWNS, fwi_gradient, forward_linear
from .grid import PropertySet, ProbeGeometry, PulseField, SimulationGrid
from .solver import PmlConfig

DX = 1e-4
CR = 0.4


def machine_descriptor():
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpus": os.cpu_count(),
    }


@dataclass
class ScalingReport:
    engine: str
    axis: str  # "cells" or "nt"
    sizes: list
    times: list
    config: dict = field(default_factory=dict)
    machine: dict = field(default_factory=machine_descriptor)

    def __post_init__(self):
        if len(self.sizes) < 3 or len(self.sizes) != len(self.times):
            raise InvalidInput("a scaling series needs at least three (size, time) pairs")

    @property
    def slope(self):
        """Least-squares slope of log(time) against log(size)."""
        return float(np.polyfit(np.log(self.sizes), np.log(self.times), 1)[0])

    def ratios(self):
        return [(s1 / s0, t1 / t0) for (s0, t0), (s1, t1) in
                zip(zip(self.sizes, self.times), zip(self.sizes[1:], self.times[1:]))]

    def summary(self):
        pts = ", ".join(f"{s}:{t:.4g}s" for s, t in zip(self.sizes, self.times))
        return f"{self.engine} vs {self.axis}: slope {self.slope:.3f} ({pts})"


def _problem(n, nt):
    grid = SimulationGrid(n, n, nt, DX, CR * DX / 1500.0)
    props = PropertySet.uniform(grid.shape, sos=1500.0, density=1000.0, attenuation=0.0, nonlinearity=3.5)
    rng = np.random.default_rng(n)
    props = props.replace(sos=1500.0 + 20.0 * rng.random(grid.shape),
                          density=1000.0 + 20.0 * rng.random(grid.shape))
    geom = ProbeGeometry.linear(grid, max(2, n // 2), 1, row=1)
    t = np.arange(nt)
    trace = 1e18 * np.sin(0.3 * t) * np.exp(-(((t - 15.0) / 6.0) ** 2))
    pulse = PulseField.point(grid, (1, n // 2), trace)
    return grid, props, geom, pulse


def _timed_series(jobs, repeats):
    """Median wall time per job. Repetitions are interleaved across jobs so slow drifts
    in machine load spread over every size instead of biasing one end of the series."""
    for job in jobs:
        job()  # warm caches (sparse stencils, allocator)
    samples = [[] for _ in jobs]
    for _ in range(repeats):
        for i, job in enumerate(jobs):
            t0 = time.perf_counter()
            job()
            samples[i].append(time.perf_counter() - t0)
    return [statistics.median(s) for s in samples]


def adjoint_job(n, nt, memory_budget=DEFAULT_TAPE_BUDGET):
    """One forward-with-tape plus reverse pass on an ``n x n`` grid, as a callable."""
    if 2 * n * n * nt * 8 > memory_budget:
        raise BudgetExceeded(f"{n}x{n}x{nt} tape exceeds the memory budget")
    grid, props, geom, pulse = _problem(n, nt)
    pml = PmlConfig()
    res = np.ones((geom.nc, nt))

    def once():
        _, tape = forward_with_tape(props, pulse, grid, pml, geom, memory_budget=memory_budget)
        backprop(tape, res)

    return once


def fwi_job(n, nt, method="per_cell", max_unknowns=DEFAULT_MAX_UNKNOWNS):
    """One baseline gradient (matrix solve plus the per-cell formula), as a callable."""
    if n * n * nt > max_unknowns:
        raise ProblemTooLarge(f"{n}x{n}x{nt} exceeds the baseline cap of {max_unknowns} unknowns")
    grid, props, geom, pulse = _problem(n, nt)
    res = np.ones((geom.nc, nt))

    def once():
        op, u = forward_linear(props, pulse, grid, props.attenuation, max_unknowns)
        fwi_gradient(op, u, res, geom, method=method)

    return once


def bench_adjoint_scaling(sizes=(128, 181, 256, 362), nt=40, nts=(40, 80, 160), n_fixed=192, repeats=5):
    """Returns ``(vs_cells, vs_nt)`` reports. ``sizes`` are grid edge lengths."""
    cells = ScalingReport("adjoint", "cells", [n * n for n in sizes],
                          _timed_series([adjoint_job(n, nt) for n in sizes], repeats),
                          {"nt": nt, "edges": list(sizes), "repeats": repeats})
    steps = ScalingReport("adjoint", "nt", list(nts),
                          _timed_series([adjoint_job(n_fixed, k) for k in nts], repeats),
                          {"edge": n_fixed, "repeats": repeats})
    return cells, steps


def bench_fwi_scaling(sizes=(16, 24, 34, 48), nt=240, nts=(960, 1920, 3840), n_fixed=16, repeats=5,
                      max_unknowns=2_000_000):
    """Returns ``(vs_cells, vs_nt)`` reports for the per-cell baseline gradient.

    The defaults keep the space-time vectors well above cache size at every point of
    each series; below that, fixed per-cell interpreter overhead flattens the slopes.
    """
    jobs = [fwi_job(n, nt, max_unknowns=max_unknowns) for n in sizes]
    cells = ScalingReport("fwi", "cells", [n * n for n in sizes], _timed_series(jobs, repeats),
                          {"nt": nt, "edges": list(sizes), "repeats": repeats})
    jobs = [fwi_job(n_fixed, k, max_unknowns=max_unknowns) for k in nts]
    steps = ScalingReport("fwi", "nt", list(nts), _timed_series(jobs, repeats),
                          {"edge": n_fixed, "repeats": repeats})
    return cells, steps


def write_report(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["engine", "axis", "size", "seconds", "slope"])
        for rep in reports:
            for s, t in zip(rep.sizes, rep.times):
                w.writerow([rep.engine, rep.axis, s, f"{t:.6g}", f"{rep.slope:.4f}"])
