import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nwi.acquisition import Waveform
from nwi.errors import CflViolation, FieldDiverged, NonlinearityBlowup, NyquistViolation, PmlTooWide, ShapeMismatch
from nwi.grid import ChannelData, ProbeGeometry, PropertySet, PulseField, SimulationGrid, restrict
from nwi.solver import (
    PmlConfig,
    effective_attenuation,
    pml_profile,
    second_harmonic_ratio,
    simulate,
    step_coefficients,
    westervelt_step,
)
from nwi.stencils import laplacian

from conftest import point_pulse

DX = 1e-4
DT = 0.4 * DX / 1600


def grid(n=12, nt=40):
    return SimulationGrid(n, n, nt, DX, DT)


# -- absorbing layer ---------------------------------------------------------------------


def test_pml_profile_points():
    g = SimulationGrid(30, 30, 5, DX, DT)
    prof = pml_profile(g, PmlConfig(8, 100.0))
    assert prof[15, 15] == 0.0
    assert prof[0, 15] == 100.0 and prof[29, 15] == 100.0 and prof[15, 0] == 100.0
    assert prof[4, 15] == pytest.approx(100.0 / 4)  # half-way into the layer
    assert prof[8, 15] == 0.0  # inner interface
    assert prof[0, 4] == 100.0  # corner takes the larger depth
    assert prof[4, 6] == pytest.approx(100.0 * (4 / 8) ** 2)


def test_pml_too_wide_and_zero_width():
    with pytest.raises(PmlTooWide):
        pml_profile(grid(10), PmlConfig(5, 1.0))
    assert not pml_profile(grid(10), PmlConfig(0, 50.0)).any()


def test_tuned_pml_caps_per_step_damping():
    g = grid(60)
    pml = PmlConfig.tuned(g, 20)
    assert pml.d_max * g.dt <= 0.25 + 1e-15


def test_effective_attenuation():
    g = grid()
    props = PropertySet.uniform(g.shape, attenuation=3.0)
    np.testing.assert_array_equal(effective_attenuation(props, pml_profile(g, PmlConfig())), props.attenuation)
    prof = pml_profile(g, PmlConfig(3, 100.0))
    zero = PropertySet.uniform(g.shape)
    np.testing.assert_array_equal(effective_attenuation(zero, prof), prof)
    rng = np.random.default_rng(0)
    d = rng.random(g.shape)
    both = effective_attenuation(zero.replace(attenuation=d), prof)
    for i in range(g.nx):
        for j in range(g.nz):
            assert both[i, j] == d[i, j] + prof[i, j]
    with pytest.raises(ShapeMismatch):
        effective_attenuation(zero, np.zeros((3, 3)))


# -- single step -----------------------------------------------------------------------


def test_rest_stays_at_rest():
    g = grid()
    z = np.zeros(g.shape)
    props = PropertySet.uniform(g.shape, nonlinearity=5.0, attenuation=1e4)
    assert not westervelt_step(z, z, props, props.attenuation, z, g).any()


def test_step_reduces_to_leapfrog():
    g = grid()
    rng = np.random.default_rng(0)
    a, b, f = rng.standard_normal((3, *g.shape))
    props = PropertySet.uniform(g.shape, sos=1530.0)
    u = westervelt_step(a, b, props, np.zeros(g.shape), f, g)
    c = 1530.0
    oracle = 2 * a - b + g.dt**2 * c**2 * laplacian(a, g.dx) + g.dt**2 * f
    np.testing.assert_allclose(u, oracle, rtol=1e-12, atol=1e-12 * np.abs(oracle).max())


def test_step_matches_coefficient_form():
    g = grid()
    rng = np.random.default_rng(4)
    a, b, f = 1e5 * rng.standard_normal((3, *g.shape))
    props = PropertySet.uniform(g.shape, sos=1500.0, density=1020.0, attenuation=2e4, nonlinearity=4.0)
    d = props.attenuation
    g1, g2, g3, g4 = step_coefficients(a, props, d, g)
    k = props.sos**2 * props.density
    # homogeneous density: no coupling term
    oracle = (g2 * a + g3 * b + g4 * (a - b) ** 2 + props.sos**2 * laplacian(a, g.dx) + f) / g1
    u = westervelt_step(a, b, props, d, f, g)
    np.testing.assert_allclose(u, oracle, rtol=1e-11)
    assert np.all(g4 == -2.0 / g.dt**2 * props.nonlinearity / k)


def test_g1_is_inv_dt2_for_zero_history():
    g = grid()
    props = PropertySet.uniform(g.shape, nonlinearity=9.0)
    g1, *_ = step_coefficients(np.zeros(g.shape), props, np.zeros(g.shape), g)
    np.testing.assert_array_equal(g1, np.full(g.shape, 1.0 / g.dt**2))


def test_nonlinearity_blowup_and_divergence():
    g = grid()
    props = PropertySet.uniform(g.shape, nonlinearity=5.0)
    k = 1480.0**2 * 1000.0
    a = np.full(g.shape, -1.2 * k / (2 * 5.0))  # 1 + 2 B a / K < 0
    z = np.zeros(g.shape)
    with pytest.raises(NonlinearityBlowup):
        westervelt_step(a, z, props, z, z, g)
    with pytest.raises(FieldDiverged):
        westervelt_step(z, z, PropertySet.uniform(g.shape), z, np.full(g.shape, 1e30), g, field_cap=1e12)


def test_step_error_carries_step_index():
    g = grid(nt=30)
    trace = np.zeros(g.nt)
    trace[5] = 1e40
    with pytest.raises(FieldDiverged) as err:
        simulate(PropertySet.uniform(g.shape), PulseField.point(g, (6, 6), trace), g, record="full")
    assert err.value.step == 5


def test_simulate_checks_cfl():
    g = SimulationGrid(8, 8, 10, DX, 1.1 * DX / 1480)
    with pytest.raises(CflViolation):
        simulate(PropertySet.uniform(g.shape), PulseField.zeros(g), g, record="full")


# -- whole runs ------------------------------------------------------------------------


def test_zero_pulse_gives_zero_output():
    g = grid()
    props = PropertySet.uniform(g.shape, nonlinearity=3.0)
    geom = ProbeGeometry.linear(g, 4, 2, row=1)
    assert not simulate(props, PulseField.zeros(g), g, PmlConfig(2, 1e5), record="full").pressure.any()
    assert not simulate(props, PulseField.zeros(g), g, geom=geom).samples.any()


def test_discrete_causality_cone():
    """The 5-point stencil spreads support by one cell (city-block) per step."""
    g = grid(21, 14)
    trace = np.zeros(g.nt)
    trace[2] = 1e12
    p = simulate(PropertySet.uniform(g.shape), PulseField.point(g, (10, 10), trace), g, record="full").pressure
    reach = np.zeros(g.shape, bool)
    reach[10, 10] = True
    for n in range(2, g.nt):
        nz = np.abs(p[..., n]) > 0
        assert not np.any(nz & ~reach), f"support outside the reachable set at step {n}"
        grown = reach.copy()
        grown[1:] |= reach[:-1]
        grown[:-1] |= reach[1:]
        grown[:, 1:] |= reach[:, :-1]
        grown[:, :-1] |= reach[:, 1:]
        reach = grown


def test_full_and_channel_records_agree_bitwise():
    g = grid(14, 50)
    rng = np.random.default_rng(5)
    props = PropertySet.uniform(g.shape, nonlinearity=4.0).replace(
        sos=1500 + 50 * rng.random(g.shape), density=1000 + 40 * rng.random(g.shape))
    geom = ProbeGeometry.linear(g, 6, 2, row=2)
    pulse = point_pulse(g, (3, 7), 1e19)
    full = simulate(props, pulse, g, PmlConfig(3, 1e6), record="full")
    ch = simulate(props, pulse, g, PmlConfig(3, 1e6), geom, record="channels")
    np.testing.assert_array_equal(restrict(full, geom).samples, ch.samples)
    again = simulate(props, pulse, g, PmlConfig(3, 1e6), geom, record="channels")
    np.testing.assert_array_equal(ch.samples, again.samples)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3), st.integers(0, 1000))
def test_linear_regime_superposition(a, seed):
    g = grid(10, 30)
    rng = np.random.default_rng(seed)
    props = PropertySet.uniform(g.shape, attenuation=1e4).replace(density=1000 + 50 * rng.random(g.shape))
    p1, p2 = point_pulse(g, (4, 4), seed=seed), point_pulse(g, (6, 5), seed=seed + 1)
    run = lambda pulse: simulate(props, pulse, g, PmlConfig(2, 1e6), record="full").pressure
    u1, u2 = run(p1), run(p2)
    scale = np.abs(u1).max() + np.abs(u2).max()
    np.testing.assert_allclose(run(p1.scaled(a)), a * u1, atol=1e-12 * scale * abs(a))
    np.testing.assert_allclose(run(p1 + p2), u1 + u2, atol=1e-12 * scale)


def test_nonlinear_regime_breaks_scaling():
    g = grid(12, 40)
    props = PropertySet.uniform(g.shape, nonlinearity=6.0)
    pulse = point_pulse(g, (6, 6), 1e21)
    u1 = simulate(props, pulse, g, record="full").pressure
    u2 = simulate(props, pulse.scaled(2.0), g, record="full").pressure
    assert np.abs(u2 - 2 * u1).max() / np.abs(u2).max() > 1e-6


# -- harmonic diagnostic ---------------------------------------------------------------


def test_second_harmonic_ratio_on_synthetic_signals():
    dt, f0, nt = 1e-8, 2e6, 2000
    t = np.arange(nt) * dt
    pure = ChannelData(np.sin(2 * np.pi * f0 * t)[None, :], dt)
    assert second_harmonic_ratio(pure, f0) < 1e-6
    mixed = ChannelData((np.sin(2 * np.pi * f0 * t) + 0.1 * np.sin(4 * np.pi * f0 * t))[None, :], dt)
    assert second_harmonic_ratio(mixed, f0) == pytest.approx(0.01, rel=0.1)
    with pytest.raises(NyquistViolation):
        second_harmonic_ratio(pure, 0.25 / dt)


def test_second_harmonic_grows_with_nonlinearity():
    g = SimulationGrid(40, 40, 300, DX, 0.4 * DX / 1480)
    geom = ProbeGeometry.linear(g, 10, 2, row=30)
    w = Waveform(1.5e6, 4, 2e21)
    pulse = PulseField.point(g, (8, 20), w(np.arange(g.nt) * g.dt))
    ratios = [second_harmonic_ratio(simulate(PropertySet.uniform(g.shape, nonlinearity=b), pulse, g,
                                             PmlConfig.tuned(g, 6), geom), 1.5e6) for b in (0.0, 6.0)]
    assert ratios[1] > ratios[0]
