import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nwi.inversion as inv
from nwi.acquisition import EmissionPlan, Waveform, synthesize_focused
from nwi.adjoint import PropertyGradients
from nwi.errors import CflViolation, InvalidInput, NonFiniteGradient, ShapeMismatch, WorkerFailure
from nwi.gradcheck import smooth_random_props
from nwi.grid import PROPERTY_NAMES, ProbeGeometry, PropertySet, SimulationGrid
from nwi.inversion import (
    LossConfig,
    MultiPulseConfig,
    OptimizerState,
    Physics,
    StageSchedule,
    StopCriteria,
    average_properties,
    data_loss,
    fwi_invert,
    invert,
    multi_pulse_invert,
    nwi_invert,
    optimizer_step,
    sobel_penalty,
    sobel_penalty_grad,
    tissue_mask,
    total_loss,
)
from nwi.solver import PmlConfig, simulate

G = SimulationGrid(16, 16, 60, 1e-4, 2.5e-8)
GEOM = ProbeGeometry.linear(G, 12, 1, row=3)
PHYS = Physics(G, GEOM, PmlConfig.tuned(G, 3))
INIT = PropertySet.uniform(G.shape, 1500.0, 1000.0, 1e4, 5.0)
NO_STOP = StopCriteria(max_iterations=100, plateau_tol=0.0, grad_tol=0.0)


def pulse(amplitude, index=0, n=1, stride=0):
    plan = EmissionPlan(n, 9, stride, Waveform(3e6, 2, amplitude), focus_depth=8e-4)
    return synthesize_focused(plan, GEOM, G, index)


def measure(props, p):
    return simulate(props, p, G, PHYS.pml, GEOM)


def grads_of(value, shape=(5, 5)):
    return PropertyGradients.from_dict({n: np.full(shape, value) for n in PROPERTY_NAMES})


# -- regulariser -------------------------------------------------------------------


def test_sobel_penalty_examples():
    assert sobel_penalty(np.full((6, 6), 3.7)) == 0.0
    imp = np.zeros((7, 7))
    imp[3, 3] = 1.0
    assert sobel_penalty(imp) == pytest.approx(math.sqrt(24), rel=1e-15)
    assert not sobel_penalty_grad(np.ones((5, 5))).any()


def test_sobel_ramp_has_no_cross_response():
    from nwi.stencils import sobel_operators

    ramp = np.repeat(np.arange(8.0)[:, None], 9, axis=1)  # varies along x only
    gx, gz = sobel_operators(8, 9)
    assert not (gz @ ramp.ravel()).reshape(8, 9)[1:-1, 1:-1].any()
    assert np.all((gx @ ramp.ravel()).reshape(8, 9)[1:-1, 1:-1] != 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_sobel_gradient_matches_finite_difference(seed):
    m = np.random.default_rng(seed).standard_normal((6, 7))
    g = sobel_penalty_grad(m)
    h = 1e-6
    for cell in [(0, 0), (2, 3), (5, 6)]:
        e = np.zeros_like(m)
        e[cell] = h
        fd = (sobel_penalty(m + e) - sobel_penalty(m - e)) / (2 * h)
        assert fd == pytest.approx(g[cell], rel=1e-5, abs=1e-8)


# -- loss --------------------------------------------------------------------------


def test_total_loss_examples():
    p = pulse(1e20)
    truth = smooth_random_props(G.shape, 2)
    meas = measure(INIT, p)
    assert total_loss(INIT, meas, p, LossConfig(1, 1, 1, 1), PHYS) == 0.0
    meas = measure(truth, p)
    ld = float(np.linalg.norm(measure(INIT, p).samples - meas.samples))
    assert total_loss(INIT, meas, p, LossConfig(), PHYS) == pytest.approx(ld, rel=1e-14)
    lam = LossConfig(1e-2, 2e-2, 1e-6, 0.3)
    r1 = total_loss(truth, meas, p, lam, PHYS) - data_loss(truth, p, meas, PHYS)
    r2 = total_loss(truth, meas, p, lam.scaled(2.0), PHYS) - data_loss(truth, p, meas, PHYS)
    assert r2 == pytest.approx(2.0 * r1, rel=1e-12)
    with pytest.raises(InvalidInput):
        LossConfig(-1.0)
    with pytest.raises(InvalidInput):
        data_loss(INIT, p, meas, PHYS, engine="other")


def test_loss_gradient_of_unsquared_norm():
    """Scaling the residual must not scale the gradient of ||P - M||."""
    p = pulse(1e15)
    truth = smooth_random_props(G.shape, 2)
    meas = measure(truth, p)
    _, g, ld = inv.loss_and_gradient(INIT, p, meas, LossConfig(), PHYS)
    meas2 = type(meas)(2.0 * meas.samples - measure(INIT, p).samples, meas.dt)  # residual doubled
    _, g2, ld2 = inv.loss_and_gradient(INIT, p, meas2, LossConfig(), PHYS)
    assert ld2 == pytest.approx(2 * ld, rel=1e-12)
    for a, b in zip(g.as_dict().values(), g2.as_dict().values()):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12 * np.abs(a).max())


# -- optimizer ---------------------------------------------------------------------


def test_gd_literal_update_and_zero_gradient():
    props = PropertySet.uniform((5, 5))
    st_ = OptimizerState("gd", rates={n: 0.1 for n in PROPERTY_NAMES})
    out = optimizer_step(st_, props, grads_of(1.0), frozenset({"sos"}))
    np.testing.assert_array_equal(out.sos, np.full((5, 5), 1480.0 - 0.1))
    np.testing.assert_array_equal(out.density, props.density)
    assert optimizer_step(st_, props, grads_of(0.0)).equals(props)
    assert optimizer_step(OptimizerState(), props, grads_of(0.0)).equals(props)


def test_adam_first_step_moves_by_rate():
    props = PropertySet.uniform((3, 3), attenuation=10.0, nonlinearity=4.0)
    state = OptimizerState("adam")
    g = PropertyGradients.from_dict({n: np.full((3, 3), s) for n, s in
                                     zip(PROPERTY_NAMES, (5.0, -2.0, 1e-3, 7.0))})
    out = optimizer_step(state, props, g)
    # bias-corrected first step is -rate * sign(g) up to eps
    for n, sign in zip(PROPERTY_NAMES, (1, -1, 1, 1)):
        rate = state.rates[n]
        np.testing.assert_allclose(getattr(out, n), getattr(props, n) - sign * rate, rtol=1e-6)
    assert state.step == 1 and set(state.first) == set(PROPERTY_NAMES)


def test_clamping_mask_and_errors():
    props = PropertySet.uniform((5, 5), attenuation=1.0, nonlinearity=0.5)
    state = OptimizerState("gd", rates={n: 1.0 for n in PROPERTY_NAMES})
    out = optimizer_step(state, props, grads_of(10.0), frozenset({"attenuation", "nonlinearity"}))
    assert not out.attenuation.any() and not out.nonlinearity.any()
    assert state.clamp_counts["attenuation"] == 25
    mask = np.zeros((5, 5), bool)
    mask[2, 2] = True
    out = optimizer_step(state, props, grads_of(0.5), frozenset({"attenuation"}), mask)
    assert out.attenuation[2, 2] == 0.5
    assert np.all(out.attenuation[~mask] == props.attenuation[~mask])
    bad = grads_of(np.nan)
    with pytest.raises(NonFiniteGradient):
        optimizer_step(state, props, bad)
    with pytest.raises(InvalidInput):
        OptimizerState("lbfgs")
    with pytest.raises(InvalidInput):
        OptimizerState(rates={"sos": 0.0})


def test_tissue_mask_examples():
    assert not tissue_mask(np.full((6, 6), 1000.0)).any()
    d = np.full((6, 6), 1000.0)
    d[2, 3] = 1060.0
    m = tissue_mask(d, 1000.0, 0.03)
    expected = np.zeros((6, 6), bool)
    expected[2, 3] = expected[1, 3] = expected[3, 3] = expected[2, 2] = expected[2, 4] = True
    np.testing.assert_array_equal(m, expected)
    d[0, 0] = 1000.0 + 1e-9
    assert tissue_mask(d, 1000.0, 0.0)[0, 0]
    with pytest.raises(InvalidInput):
        tissue_mask(d, 0.0)


def test_stage_schedule():
    s = StageSchedule.from_fraction(10)
    assert s.k1 == 6 and s.phase(5) == 1 and s.phase(6) == 2
    with pytest.raises(InvalidInput):
        StageSchedule(0)


# -- single emission ---------------------------------------------------------------


def test_zero_iterations_returns_init():
    p = pulse(1e20)
    res = nwi_invert(measure(INIT, p), p, INIT, LossConfig(), OptimizerState(), None,
                     StopCriteria(max_iterations=0), PHYS)
    assert res.props is INIT


def test_starting_at_truth_stays_there():
    p = pulse(1e21)
    truth = smooth_random_props(G.shape, 2)
    res = nwi_invert(measure(truth, p), p, truth, LossConfig(), OptimizerState(), None,
                     StopCriteria(max_iterations=10, plateau_tol=0.0, grad_tol=0.0), PHYS)
    assert res.props.equals(truth)
    assert all(v == 0.0 for v in res.losses)


def test_gd_is_monotone_in_linear_regime():
    p = pulse(1e15)
    meas = measure(smooth_random_props(G.shape, 2), p)
    opt = OptimizerState("gd", rates={"sos": 100.0, "density": 100.0, "attenuation": 1e4, "nonlinearity": 1e-3})
    res = invert(meas, p, INIT, LossConfig(), opt, None, StopCriteria(25, 0.0, 10, 0.0), PHYS)
    d = np.diff(res.data_losses)
    assert len(d) >= 20 and np.all(d <= 0)
    assert res.data_losses[-1] < 0.9 * res.data_losses[0]


def test_phase_two_leaves_sos_and_density_untouched():
    p = pulse(1e21)
    truth = smooth_random_props(G.shape, 2)
    start = smooth_random_props(G.shape, 5)
    res = nwi_invert(measure(truth, p), p, start, LossConfig(), OptimizerState(), StageSchedule(1),
                     StopCriteria(3, 0.0, 10, 0.0), PHYS, iteration_offset=1)
    np.testing.assert_array_equal(res.props.sos, start.sos)
    np.testing.assert_array_equal(res.props.density, start.density)
    outside = ~tissue_mask(start.density)
    assert not np.array_equal(res.props.attenuation, start.attenuation)
    np.testing.assert_array_equal(res.props.attenuation[outside], start.attenuation[outside])


def test_cfl_violation_mid_run_carries_iterate(monkeypatch):
    p = pulse(1e20)
    meas = measure(INIT, p)

    def fake(props, *_a, **_k):
        return 1.0, grads_of(-1e4, G.shape), 1.0

    monkeypatch.setattr(inv, "loss_and_gradient", fake)
    opt = OptimizerState("gd", rates={n: 1.0 for n in PROPERTY_NAMES})
    with pytest.raises(CflViolation) as err:
        invert(meas, p, INIT, LossConfig(), opt, None, NO_STOP, PHYS)
    assert err.value.iterate is not None
    assert np.all(err.value.iterate.sos == 1500.0 + 1e4)


def test_stop_reasons():
    p = pulse(1e20)
    meas = measure(INIT, p)
    res = nwi_invert(meas, p, INIT, LossConfig(), OptimizerState(), None, StopCriteria(5, 1e-4, 2, 1e-8), PHYS)
    assert res.stop_reason in ("gradient_tolerance", "loss_plateau")


def test_fwi_engine_keeps_nonlinearity():
    p = pulse(1e20)
    truth = smooth_random_props(G.shape, 2)
    res = fwi_invert(measure(truth, p), p, INIT, LossConfig(), OptimizerState(), None,
                     StopCriteria(3, 0.0, 10, 0.0), PHYS)
    np.testing.assert_array_equal(res.props.nonlinearity, INIT.nonlinearity)
    assert not np.array_equal(res.props.sos, INIT.sos)


# -- multiple emissions --------------------------------------------------------------


def _dataset(n, amplitude=1e21):
    truth = smooth_random_props(G.shape, 2)
    out = []
    for i in range(n):
        p = pulse(amplitude, i, n, stride=1)
        out.append((p, measure(truth, p)))
    return out


def test_average_properties_oracle():
    a = smooth_random_props((6, 6), 1)
    b = smooth_random_props((6, 6), 2)
    avg = average_properties([a, b])
    for n in PROPERTY_NAMES:
        np.testing.assert_allclose(getattr(avg, n), (getattr(a, n) + getattr(b, n)) / 2, rtol=1e-15)
    assert average_properties([a, a]).equals(a)


def test_single_emission_equals_plain_loop():
    data = _dataset(1)
    sched = StageSchedule(4)
    mp = multi_pulse_invert(data, INIT, LossConfig(), OptimizerState(), sched, PHYS,
                            MultiPulseConfig(outer_iterations=3, inner_steps=2))
    plain = nwi_invert(data[0][1], data[0][0], INIT, LossConfig(), OptimizerState(), sched,
                       StopCriteria(6, 0.0, 10, 0.0), PHYS)
    assert mp.props.equals(plain.props)


def test_identical_workers_average_to_either():
    (p, m), = _dataset(1)
    cfg = MultiPulseConfig(outer_iterations=2, inner_steps=2)
    both = multi_pulse_invert([(p, m), (p, m)], INIT, LossConfig(), OptimizerState(), None, PHYS, cfg)
    one = multi_pulse_invert([(p, m)], INIT, LossConfig(), OptimizerState(), None, PHYS, cfg)
    assert both.props.equals(one.props)


def test_worker_count_does_not_change_result():
    data = _dataset(3)
    kw = dict(outer_iterations=2, inner_steps=2)
    serial = multi_pulse_invert(data, INIT, LossConfig(), OptimizerState(), StageSchedule(2), PHYS,
                                MultiPulseConfig(**kw, workers=1))
    pooled = multi_pulse_invert(data, INIT, LossConfig(), OptimizerState(), StageSchedule(2), PHYS,
                                MultiPulseConfig(**kw, workers=2))
    assert serial.props.equals(pooled.props)
    assert serial.round_losses == pooled.round_losses


@pytest.mark.parametrize("workers", [1, 2])
def test_worker_failure_names_the_emission(workers):
    data = _dataset(2)
    bad = type(data[1][1])(np.zeros((3, G.nt)), G.dt)
    data[1] = (data[1][0], bad)
    with pytest.raises(WorkerFailure) as err:
        multi_pulse_invert(data, INIT, LossConfig(), OptimizerState(), None, PHYS,
                           MultiPulseConfig(1, 1, workers=workers))
    assert err.value.worker == 1
    assert isinstance(err.value.cause, ShapeMismatch)
    with pytest.raises(InvalidInput):
        multi_pulse_invert([], INIT, LossConfig(), OptimizerState(), None, PHYS, MultiPulseConfig())


def test_multi_pulse_fwi_never_touches_nonlinearity():
    data = _dataset(2, 1e20)
    res = multi_pulse_invert(data, INIT, LossConfig(), OptimizerState(), None, PHYS,
                             MultiPulseConfig(2, 2, engine="fwi"))
    np.testing.assert_array_equal(res.props.nonlinearity, INIT.nonlinearity)
