"""Run configuration: a YAML document merged over built-in desk-scale defaults.

Every value is checked when the file is loaded; failures raise
:class:`~nwi.errors.ConfigError` naming the dotted key path.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .acquisition import EmissionPlan, Waveform, snr_from_db
from .errors import ConfigError, NWIError
from .grid import PROPERTY_NAMES, ProbeGeometry, PropertySet, SimulationGrid
from .inversion import LossConfig, MultiPulseConfig, OptimizerState, Physics, StageSchedule
from .phantom import TISSUES, Ellipse, Inclusion, PhantomSpec, PropertyBounds, Rectangle, two_inclusion_spec
from .solver import PmlConfig

# 48 x 48 cells of 0.15 mm, 1 MHz pulses, C_r about 0.4 for the fastest tissue.
DEFAULTS = {
    "grid": {"nx": 48, "nz": 48, "nt": 420, "dx": 1.5e-4, "dt": 3.8e-8},
    "pml": {"width": 8, "d_max": None},
    "probe": {"nc": 40, "pitch_cells": 1, "row": 8},
    "plan": {
        "n_emissions": 4,
        "aperture": 16,
        "stride": 8,
        "f0": 1.0e6,
        "cycles": 3.0,
        "amplitude": 2.0e21,
        "focus_depth": 3.0e-3,
        "assumed_sos": 1480.0,
    },
    "noise": {"snr": "inf", "units": "linear", "seed": 0},
    "loss": {"lambda_sos": 0.0, "lambda_density": 0.0, "lambda_attenuation": 0.0, "lambda_nonlinearity": 0.0},
    "optimizer": {
        "kind": "adam",
        "rates": {"sos": 5.0, "density": 5.0, "attenuation": 100.0, "nonlinearity": 0.05},
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    },
    "schedule": {
        "k1_fraction": 0.6,
        "mask_threshold": 0.02,
        "inner_steps": 5,
        "outer_iterations": 12,
        "workers": 1,
    },
    "phantom": {"preset": "two-inclusion", "background": "water-physical", "left": "fat", "right": "liver"},
    "init": {"background": "water-physical"},
    "bounds": {
        "sos": [1400.0, 1650.0],
        "density": [900.0, 1100.0],
        "attenuation": [0.0, 5.0e4],
        "nonlinearity": [0.0, 10.0],
    },
    "eval": {"exclude_pml": True},
    "fwi": {"max_unknowns": 2_000_000},
    "gradcheck": {"nx": 16, "nz": 16, "nt": 60, "dx": 1.0e-4, "dt": 2.5e-8, "cells": 20, "tolerance": 1e-5,
                  "seed": 0, "amplitude": 1.0e21, "f0": 3.0e6, "zero_pulse": False},
}

# Defaults that no published value backs; every manifest lists them.
UNANCHORED_DEFAULTS = [
    "optimizer.rates", "schedule.k1_fraction", "schedule.mask_threshold", "schedule.inner_steps",
    "schedule.outer_iterations", "loss", "phantom.left", "phantom.right", "init.background",
]


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _get(raw, path, kind=float, *, positive=False, nonneg=False, choices=None):
    node = raw
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(path, "missing")
        node = node[part]
    if choices is not None:
        if node not in choices:
            raise ConfigError(path, f"must be one of {sorted(choices)}, got {node!r}")
        return node
    try:
        if kind is int and (isinstance(node, bool) or float(node) != int(node)):
            raise ValueError
        val = kind(node)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {node!r}") from None
    if kind is float and math.isnan(val):
        raise ConfigError(path, "NaN is not allowed")
    if positive and not val > 0:
        raise ConfigError(path, f"must be positive, got {val!r}")
    if nonneg and val < 0:
        raise ConfigError(path, f"must be non-negative, got {val!r}")
    return val


def _tissue(value, path):
    if isinstance(value, str):
        if value not in TISSUES:
            raise ConfigError(path, f"unknown tissue {value!r}; known: {sorted(TISSUES)}")
        return TISSUES[value]
    try:
        t = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a tissue name or four numbers, got {value!r}") from None
    if len(t) != 4:
        raise ConfigError(path, "property tuples are [sos, density, attenuation, nonlinearity]")
    return t


def _wrap(path, fn, *args, **kw):
    """Run a constructor and re-raise its validation error under ``path``."""
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (NWIError, ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


@dataclass
class RunConfig:
    raw: dict
    grid: SimulationGrid
    pml: PmlConfig
    geom: ProbeGeometry
    plan: EmissionPlan
    snr: float
    seed: int
    loss: LossConfig
    optimizer: dict
    schedule: dict
    phantom: PhantomSpec
    init_tissue: tuple
    bounds: PropertyBounds
    exclude_pml: bool
    fwi_max_unknowns: int
    gradcheck: dict

    def physics(self):
        return Physics(self.grid, self.geom, self.pml, self.fwi_max_unknowns)

    def initial_props(self):
        return PropertySet.uniform(self.grid.shape, *self.init_tissue)

    def new_optimizer(self):
        return OptimizerState(**self.optimizer)

    def total_iterations(self):
        return self.schedule["outer_iterations"] * self.schedule["inner_steps"]

    def stage_schedule(self):
        total = max(1, self.total_iterations())
        return StageSchedule.from_fraction(total, self.schedule["k1_fraction"],
                                           mask_threshold=self.schedule["mask_threshold"],
                                           water_density=self.init_tissue[1])

    def multi_pulse(self, engine):
        s = self.schedule
        return MultiPulseConfig(s["outer_iterations"], s["inner_steps"], s["workers"], engine)


def build(raw) -> RunConfig:
    g = "grid"
    grid = _wrap(g, SimulationGrid, _get(raw, "grid.nx", int), _get(raw, "grid.nz", int),
                 _get(raw, "grid.nt", int), _get(raw, "grid.dx", positive=True), _get(raw, "grid.dt", positive=True))

    width = _get(raw, "pml.width", int, nonneg=True)
    if 2 * width >= min(grid.nx, grid.nz):
        raise ConfigError("pml.width", f"{width} cells leave no interior in a {grid.nx}x{grid.nz} grid")
    d_max = raw["pml"].get("d_max")
    if d_max is None:
        pml = PmlConfig.tuned(grid, width)
    else:
        pml = _wrap("pml.d_max", PmlConfig, width, _get(raw, "pml.d_max", nonneg=True))

    nc = _get(raw, "probe.nc", int, positive=True)
    pitch = _get(raw, "probe.pitch_cells", int, positive=True)
    row = _get(raw, "probe.row", int, nonneg=True)
    geom = _wrap("probe", ProbeGeometry.linear, grid, nc, pitch, row)
    _wrap("probe", geom.check_inside, grid.shape)

    wave = Waveform(_get(raw, "plan.f0", positive=True), _get(raw, "plan.cycles", positive=True),
                    _get(raw, "plan.amplitude"))
    plan = EmissionPlan(_get(raw, "plan.n_emissions", int, positive=True), _get(raw, "plan.aperture", int, positive=True),
                        _get(raw, "plan.stride", int, nonneg=True), wave, _get(raw, "plan.focus_depth", positive=True),
                        _get(raw, "plan.assumed_sos", positive=True))
    _wrap("plan", plan.validate, nc, grid.dt)

    units = _get(raw, "noise.units", choices={"linear", "db"})
    snr_raw = raw["noise"].get("snr")
    if snr_raw in ("inf", "Infinity", None) or snr_raw == math.inf:
        snr = math.inf
    else:
        snr = _get(raw, "noise.snr")
        snr = snr_from_db(snr) if units == "db" else snr
        if not snr > 0:
            raise ConfigError("noise.snr", "must be positive")
    seed = _get(raw, "noise.seed", int, nonneg=True)

    loss = _wrap("loss", LossConfig, *(_get(raw, f"loss.lambda_{n}", nonneg=True) for n in PROPERTY_NAMES))

    rates = {n: _get(raw, f"optimizer.rates.{n}", positive=True) for n in PROPERTY_NAMES}
    optimizer = {
        "kind": _get(raw, "optimizer.kind", choices={"gd", "adam"}),
        "rates": rates,
        "beta1": _get(raw, "optimizer.beta1", nonneg=True),
        "beta2": _get(raw, "optimizer.beta2", nonneg=True),
        "eps": _get(raw, "optimizer.eps", positive=True),
    }
    for key in ("beta1", "beta2"):
        if not optimizer[key] < 1:
            raise ConfigError(f"optimizer.{key}", "must be below 1")

    schedule = {
        "k1_fraction": _get(raw, "schedule.k1_fraction", nonneg=True),
        "mask_threshold": _get(raw, "schedule.mask_threshold", positive=True),
        "inner_steps": _get(raw, "schedule.inner_steps", int, positive=True),
        "outer_iterations": _get(raw, "schedule.outer_iterations", int, nonneg=True),
        "workers": _get(raw, "schedule.workers", int, positive=True),
    }
    if schedule["k1_fraction"] > 1:
        raise ConfigError("schedule.k1_fraction", "must be within [0, 1]")

    phantom = _build_phantom(raw, grid)
    init_tissue = _tissue(raw["init"].get("background", "water"), "init.background")
    _wrap("init.background", PropertySet.uniform, (3, 3), *init_tissue)

    bounds = {}
    for n in PROPERTY_NAMES:
        pair = raw["bounds"].get(n)
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"bounds.{n}", f"expected [min, max], got {pair!r}")
        bounds[n] = (float(pair[0]), float(pair[1]))
        if not bounds[n][1] > bounds[n][0]:
            raise ConfigError(f"bounds.{n}", "max must exceed min")
    gc_raw = raw["gradcheck"]
    gradcheck = {
        "grid": _wrap("gradcheck", SimulationGrid, _get(raw, "gradcheck.nx", int), _get(raw, "gradcheck.nz", int),
                      _get(raw, "gradcheck.nt", int), _get(raw, "gradcheck.dx", positive=True),
                      _get(raw, "gradcheck.dt", positive=True)),
        "cells": _get(raw, "gradcheck.cells", int, positive=True),
        "tolerance": _get(raw, "gradcheck.tolerance", positive=True),
        "seed": _get(raw, "gradcheck.seed", int, nonneg=True),
        "amplitude": _get(raw, "gradcheck.amplitude"),
        "f0": _get(raw, "gradcheck.f0", positive=True),
        "zero_pulse": bool(gc_raw.get("zero_pulse", False)),
    }
    return RunConfig(raw, grid, pml, geom, plan, snr, seed, loss, optimizer, schedule, phantom, init_tissue,
                     PropertyBounds(**bounds), bool(raw["eval"].get("exclude_pml", True)),
                     _get(raw, "fwi.max_unknowns", int, positive=True), gradcheck)


def _build_phantom(raw, grid):
    ph = raw["phantom"]
    preset = _get(raw, "phantom.preset", choices={"water", "two-inclusion", "custom"})
    background = _tissue(ph.get("background", "water"), "phantom.background")
    extent = (grid.nx * grid.dx, grid.nz * grid.dx)
    if preset == "water":
        return _wrap("phantom", PhantomSpec, extent, background)
    if preset == "two-inclusion":
        left = ph.get("left", "fat")
        right = ph.get("right", "liver")
        for key, name in (("phantom.left", left), ("phantom.right", right)):
            _tissue(name, key)
        spec = two_inclusion_spec(grid, left=left, right=right)
        return _wrap("phantom", PhantomSpec, extent, background, spec.inclusions)
    incs = []
    for i, inc in enumerate(ph.get("inclusions") or []):
        path = f"phantom.inclusions.{i}"
        props = _tissue(inc.get("properties"), f"{path}.properties")
        kind = inc.get("shape")
        try:
            if kind == "ellipse":
                shape = Ellipse(tuple(map(float, inc["center"])), tuple(map(float, inc["semi_axes"])))
            elif kind == "rectangle":
                shape = Rectangle(tuple(map(float, inc["corner"])), tuple(map(float, inc["size"])))
            else:
                raise ConfigError(f"{path}.shape", f"must be 'ellipse' or 'rectangle', got {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"{path}.{exc.args[0]}", "missing") from None
        incs.append(Inclusion(shape, props))
    return _wrap("phantom.inclusions", PhantomSpec, extent, background, tuple(incs))


def load_config(path=None, seed=None) -> RunConfig:
    """Merge the YAML file at ``path`` (if any) over :data:`DEFAULTS` and validate it."""
    user = {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"{path} is not valid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("<root>", "the configuration must be a mapping")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
    raw = deep_merge(DEFAULTS, user)
    if seed is not None:
        raw["noise"]["seed"] = int(seed)
    return build(raw)


def dump_config(raw):
    return yaml.safe_dump(raw, sort_keys=True)
