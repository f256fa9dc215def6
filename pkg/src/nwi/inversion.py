"""Regularised loss, optimizers, staged estimation and multi-emission averaging.

The loss for one emission is::

    L = ||P - M||_F + sum_i lambda_i ||Sobel(theta_i)||_F

Two engines provide the data term and its gradient: ``"nwi"`` (the nonlinear
recurrence and its reverse pass) and ``"fwi"`` (the assembled linear operator,
``B`` ignored). Both run through the same optimizer and staging loop.
"""

from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .adjoint import PropertyGradients, backprop, forward_with_tape
from .fwi import check_size, forward_linear, fwi_gradient, restrict_vector
from .errors import CflViolation, InvalidInput, NonFiniteGradient, ShapeMismatch, WorkerFailure
from .grid import PROPERTY_NAMES, ChannelData, PropertySet, check_cfl
from .solver import PmlConfig, pml_profile, simulate
from .stencils import sobel, sobel_transpose

log = logging.getLogger(__name__)

ALL_PROPERTIES = frozenset(PROPERTY_NAMES)
WATER_DENSITY = 1000.0


@dataclass(frozen=True)
class LossConfig:
    lambda_sos: float = 0.0
    lambda_density: float = 0.0
    lambda_attenuation: float = 0.0
    lambda_nonlinearity: float = 0.0

    def __post_init__(self):
        if min(self.weights().values()) < 0:
            raise InvalidInput("regularisation weights must be non-negative")

    def weights(self):
        return {
            "sos": self.lambda_sos,
            "density": self.lambda_density,
            "attenuation": self.lambda_attenuation,
            "nonlinearity": self.lambda_nonlinearity,
        }

    def scaled(self, s):
        return LossConfig(*(v * s for v in self.weights().values()))


@dataclass(frozen=True)
class Physics:
    """Everything besides the properties that a forward run needs."""

    grid: object
    geom: object
    pml: PmlConfig = PmlConfig()
    fwi_max_unknowns: int = 200_000

    def pml_map(self):
        return pml_profile(self.grid, self.pml)


# -- regulariser ------------------------------------------------------------------


def sobel_penalty(m) -> float:
    """Frobenius norm of the two-component Sobel edge response."""
    rx, rz = sobel(m)
    return float(math.sqrt(np.sum(rx * rx) + np.sum(rz * rz)))


def sobel_penalty_grad(m):
    """Gradient of :func:`sobel_penalty`; zero where the penalty itself is zero."""
    rx, rz = sobel(m)
    norm = math.sqrt(np.sum(rx * rx) + np.sum(rz * rz))
    if norm == 0.0:
        return np.zeros(rx.shape)
    return sobel_transpose(rx, rz) / norm


def regularization(props, loss_cfg):
    return sum(w * sobel_penalty(getattr(props, n)) for n, w in loss_cfg.weights().items() if w)


# -- loss and gradient -------------------------------------------------------------


def _predict(engine, props, pulse, physics):
    if engine == "nwi":
        return simulate(props, pulse, physics.grid, physics.pml, physics.geom, record="channels")
    if engine == "fwi":
        op, u = forward_linear(props, pulse, physics.grid, props.attenuation + physics.pml_map(),
                               physics.fwi_max_unknowns)
        return restrict_vector(op, u, physics.geom)
    raise InvalidInput(f"unknown engine {engine!r}")


def _residual(pred, measured):
    if pred.samples.shape != measured.samples.shape:
        raise ShapeMismatch(f"measured data {measured.samples.shape} != predicted {pred.samples.shape}")
    return pred.samples - measured.samples


def data_loss(props, pulse, measured, physics, engine="nwi"):
    pred = _predict(engine, props, pulse, physics)
    return float(np.linalg.norm(_residual(pred, measured)))


def total_loss(props, measured, pulse, loss_cfg, physics, engine="nwi"):
    return data_loss(props, pulse, measured, physics, engine) + regularization(props, loss_cfg)


def _data_gradient(engine, props, pulse, measured, physics):
    """Return ``(||P - M||_F, gradient of that norm)``."""
    if engine == "nwi":
        pred, tape = forward_with_tape(props, pulse, physics.grid, physics.pml, physics.geom)
        res = _residual(pred, measured)
        norm = float(np.linalg.norm(res))
        if norm == 0.0:
            return 0.0, PropertyGradients.zeros(props.shape)
        return norm, backprop(tape, res / norm)
    if engine == "fwi":
        op, u = forward_linear(props, pulse, physics.grid, props.attenuation + physics.pml_map(),
                               physics.fwi_max_unknowns)
        res = _residual(restrict_vector(op, u, physics.geom), measured)
        norm = float(np.linalg.norm(res))
        if norm == 0.0:
            return 0.0, PropertyGradients.zeros(props.shape)
        g = fwi_gradient(op, u, res / norm, physics.geom)
        g["nonlinearity"] = np.zeros(props.shape)
        return norm, PropertyGradients.from_dict(g)
    raise InvalidInput(f"unknown engine {engine!r}")


def loss_and_gradient(props, pulse, measured, loss_cfg, physics, engine="nwi"):
    """Return ``(L, dL/dtheta, data part of L)`` for the regularised loss."""
    ld, g = _data_gradient(engine, props, pulse, measured, physics)
    reg = 0.0
    grads = g.as_dict()
    for name, w in loss_cfg.weights().items():
        if w:
            m = getattr(props, name)
            reg += w * sobel_penalty(m)
            grads[name] = grads[name] + w * sobel_penalty_grad(m)
    return ld + reg, PropertyGradients.from_dict(grads), ld


# -- optimizers ---------------------------------------------------------------------

DEFAULT_RATES = {"sos": 1.0, "density": 1.0, "attenuation": 1e-2, "nonlinearity": 1e-3}
DEFAULT_FLOORS = {"sos": 100.0, "density": 100.0, "attenuation": 0.0, "nonlinearity": 0.0}


@dataclass
class OptimizerState:
    kind: str = "adam"
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    floors: dict = field(default_factory=lambda: dict(DEFAULT_FLOORS))
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    clamp_counts: dict = field(default_factory=lambda: {n: 0 for n in PROPERTY_NAMES})

    def __post_init__(self):
        if self.kind not in ("gd", "adam"):
            raise InvalidInput(f"unknown optimizer {self.kind!r}")
        if any(r <= 0 for r in self.rates.values()):
            raise InvalidInput("learning rates must be positive")

    def copy(self):
        return copy.deepcopy(self)


def optimizer_step(state: OptimizerState, props: PropertySet, grads: PropertyGradients,
                   active=ALL_PROPERTIES, mask=None) -> PropertySet:
    """One update of the active maps; ``mask`` limits the update to the selected cells."""
    gd = grads.as_dict()
    for name in active:
        if not np.all(np.isfinite(gd[name])):
            raise NonFiniteGradient(f"gradient of {name} has non-finite entries")
    state.step += 1
    t = state.step
    new = {}
    for name in PROPERTY_NAMES:
        current = getattr(props, name)
        if name not in active:
            continue
        g = gd[name]
        lr = state.rates[name]
        if state.kind == "gd":
            upd = current - lr * g
        else:
            m = state.first.get(name, np.zeros_like(current))
            v = state.second.get(name, np.zeros_like(current))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            state.first[name], state.second[name] = m, v
            mhat = m / (1.0 - state.beta1**t)
            vhat = v / (1.0 - state.beta2**t)
            upd = current - lr * mhat / (np.sqrt(vhat) + state.eps)
        floor = state.floors.get(name, 0.0)
        low = upd < floor
        if np.any(low):
            state.clamp_counts[name] = state.clamp_counts.get(name, 0) + int(np.count_nonzero(low))
            upd = np.where(low, floor, upd)
        if mask is not None:
            upd = np.where(mask, upd, current)
        new[name] = upd
    return props.replace(**new) if new else props


def tissue_mask(density_est, water_density=WATER_DENSITY, threshold=0.02):
    """Cells whose density departs from water by more than ``threshold`` (relative), dilated once."""
    if water_density <= 0:
        raise InvalidInput("water density must be positive")
    raw = np.abs(np.asarray(density_est, float) - water_density) / water_density > threshold
    return ndimage.binary_dilation(raw, structure=ndimage.generate_binary_structure(2, 1))


# -- staged single-emission loop --------------------------------------------------


@dataclass(frozen=True)
class StageSchedule:
    """Phase 1 updates sos and density for ``k1`` iterations; phase 2 updates attenuation
    and nonlinearity inside the tissue mask."""

    k1: int
    mask_threshold: float = 0.02
    water_density: float = WATER_DENSITY
    phase1: frozenset = frozenset({"sos", "density"})
    phase2: frozenset = frozenset({"attenuation", "nonlinearity"})

    def __post_init__(self):
        if self.k1 < 1 or self.mask_threshold <= 0:
            raise InvalidInput("k1 must be >= 1 and the mask threshold positive")

    @classmethod
    def from_fraction(cls, total_iterations, fraction=0.6, **kw):
        return cls(max(1, int(round(fraction * total_iterations))), **kw)

    def phase(self, iteration):
        return 1 if iteration < self.k1 else 2


@dataclass(frozen=True)
class StopCriteria:
    max_iterations: int = 100
    plateau_tol: float = 1e-4
    patience: int = 10
    grad_tol: float = 1e-8  # relative to the first gradient's infinity norm


@dataclass
class InversionResult:
    props: PropertySet
    losses: list
    data_losses: list
    stop_reason: str
    optimizer: OptimizerState
    iterations: int = 0


def _grad_inf(grads, active):
    d = grads.as_dict()
    return max((float(np.max(np.abs(d[n]))) for n in active), default=0.0)


def invert(measured, pulse, init_props, loss_cfg, opt, schedule, stop, physics, *, engine="nwi",
           iteration_offset=0, evaluate_final=True, allowed=ALL_PROPERTIES):
    """Gradient loop shared by both engines; ``engine="fwi"`` gives the linear baseline."""
    opt = opt if isinstance(opt, OptimizerState) else OptimizerState(**opt)
    props = init_props
    losses, data_losses = [], []
    g0 = None
    reason = "max_iterations"
    it = 0
    for it in range(stop.max_iterations):
        try:
            check_cfl(props, physics.grid)
        except CflViolation as exc:
            exc.iterate = props
            raise
        loss, grads, ld = loss_and_gradient(props, pulse, measured, loss_cfg, physics, engine)
        losses.append(loss)
        data_losses.append(ld)
        k = iteration_offset + it
        if schedule is None:
            active, mask = ALL_PROPERTIES, None
        elif schedule.phase(k) == 1:
            active, mask = schedule.phase1, None
        else:
            active = schedule.phase2
            mask = tissue_mask(props.density, schedule.water_density, schedule.mask_threshold)
        active = frozenset(active) & frozenset(allowed)
        gnorm = _grad_inf(grads, active)
        if g0 is None:
            g0 = gnorm
        if stop.grad_tol > 0 and (gnorm == 0.0 or gnorm < stop.grad_tol * g0):
            reason = "gradient_tolerance"
            break
        if stop.plateau_tol > 0 and len(losses) > stop.patience:
            old = losses[-1 - stop.patience]
            if old > 0 and (old - loss) / old < stop.plateau_tol:
                reason = "loss_plateau"
                break
        props = optimizer_step(opt, props, grads, active, mask)
        log.debug("iter %d loss %.6g data %.6g", k, loss, ld)
    else:
        it = stop.max_iterations
    if evaluate_final and reason == "max_iterations":
        loss = total_loss(props, measured, pulse, loss_cfg, physics, engine)
        losses.append(loss)
        data_losses.append(loss - regularization(props, loss_cfg))
    return InversionResult(props, losses, data_losses, reason, opt, it)


def nwi_invert(measured, pulse, init_props, loss_cfg, opt, schedule, stop, physics, **kw):
    return invert(measured, pulse, init_props, loss_cfg, opt, schedule, stop, physics, engine="nwi", **kw)


def fwi_invert(measured, pulse, init_props, loss_cfg, opt, schedule, stop, physics, **kw):
    """Linear-model inversion; the nonlinearity map is carried through untouched."""
    allowed = frozenset({"sos", "density", "attenuation"})
    return invert(measured, pulse, init_props, loss_cfg, opt, schedule, stop, physics,
                  engine="fwi", allowed=allowed, **kw)


# -- multi-emission averaging ------------------------------------------------------


@dataclass(frozen=True)
class MultiPulseConfig:
    outer_iterations: int = 10
    inner_steps: int = 5
    workers: int = 1
    engine: str = "nwi"


def average_properties(estimates):
    """Cell-wise mean, summed in list order so results do not depend on scheduling."""
    n = len(estimates)
    maps = {}
    for name in PROPERTY_NAMES:
        acc = np.array(getattr(estimates[0], name), copy=True)
        for est in estimates[1:]:
            acc = acc + getattr(est, name)
        maps[name] = acc / n
    return PropertySet.from_dict(maps)


def _worker(args):
    (index, measured, pulse, props, loss_cfg, opt, schedule, inner, physics, engine, offset) = args
    stop = StopCriteria(max_iterations=inner, plateau_tol=0.0, grad_tol=0.0)
    res = invert(measured, pulse, props, loss_cfg, opt, schedule, stop, physics, engine=engine,
                 iteration_offset=offset, evaluate_final=False,
                 allowed=ALL_PROPERTIES if engine == "nwi" else {"sos", "density", "attenuation"})
    return index, res.props, res.optimizer, res.losses, res.data_losses


@dataclass
class MultiPulseResult:
    props: PropertySet
    round_losses: list  # per round, per emission: losses of the inner steps
    round_data_losses: list
    optimizers: list


def multi_pulse_invert(dataset, init_props, loss_cfg, opt, schedule, physics, cfg: MultiPulseConfig,
                       on_round=None):
    """Local-step averaging over emissions.

    Every emission keeps its own optimizer state between rounds. Each round
    starts all workers from the shared estimate, runs ``inner_steps`` updates,
    and replaces the estimate by the cell-wise mean of the returned maps.
    """
    n_l = len(dataset)
    if n_l < 1:
        raise InvalidInput("multi-pulse inversion needs at least one emission")
    if cfg.engine == "fwi":
        check_size(physics.grid, physics.fwi_max_unknowns)
    base = opt if isinstance(opt, OptimizerState) else OptimizerState(**opt)
    states = [base.copy() for _ in range(n_l)]
    props = init_props
    round_losses, round_data = [], []
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 and n_l > 1 else None
    try:
        for rnd in range(cfg.outer_iterations):
            jobs = [
                (l, dataset[l][1], dataset[l][0], props, loss_cfg, states[l], schedule,
                 cfg.inner_steps, physics, cfg.engine, rnd * cfg.inner_steps)
                for l in range(n_l)
            ]
            results = [None] * n_l
            if pool is None:
                for job in jobs:
                    try:
                        results[job[0]] = _worker(job)
                    except Exception as exc:  # noqa: BLE001 - re-raised with the worker index
                        raise WorkerFailure(job[0], exc) from exc
            else:
                futures = [pool.submit(_worker, job) for job in jobs]
                for l, fut in enumerate(futures):
                    try:
                        results[l] = fut.result()
                    except Exception as exc:  # noqa: BLE001
                        raise WorkerFailure(l, exc) from exc
            results.sort(key=lambda r: r[0])
            states = [r[2] for r in results]
            props = average_properties([r[1] for r in results])
            round_losses.append([r[3] for r in results])
            round_data.append([r[4] for r in results])
            if on_round is not None:
                on_round(rnd, props, round_data[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return MultiPulseResult(props, round_losses, round_data, states)


def dataset_loss(props, dataset, physics, engine="nwi"):
    """Sum over emissions of the data term ``||P_l - M_l||_F``."""
    return sum(data_loss(props, pulse, meas, physics, engine) for pulse, meas in dataset)
