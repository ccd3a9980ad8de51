import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kljn.circuit import (
    Abrupt,
    CableModel,
    CircuitState,
    LinearRamp,
    LoopConfig,
    SolverDivergenceError,
    analytic_loop_spectra,
    charging_rate_demo,
    max_stable_step,
    simulate_period,
    step,
)
from kljn.signal import NoiseSpec, SampledSignal, band_mean_density, generate_band_limited_gaussian

K = 0.25


def test_cable_validation():
    with pytest.raises(ValueError, match="inductance or resistance"):
        CableModel(n_segments=4, shunt_capacitance=1e-9)
    with pytest.raises(ValueError, match="tap node"):
        CableModel(n_segments=4, series_inductance=1e-6, tap_nodes=(5,))
    with pytest.raises(ValueError):
        CableModel(n_segments=0)
    with pytest.raises(ValueError):
        CableModel(n_segments=2, series_inductance=-1.0)


def test_line_parameters_round_trip():
    cab = CableModel.from_line(32, 6e-5, 300.0)
    assert cab.delay == pytest.approx(6e-5)
    assert cab.impedance == pytest.approx(300.0)
    assert cab.total_capacitance == pytest.approx(6e-5 / 300)
    caps = cab.node_capacitances()
    assert caps.sum() == pytest.approx(cab.total_capacitance)
    assert caps[0] == caps[-1] == pytest.approx(caps[1] / 2)


def test_envelopes():
    assert Abrupt()(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 1.0, 1.0]
    ramp = LinearRamp(2.0)
    assert ramp(np.array([0.0, 1.0, 3.0])).tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        LinearRamp(0.0)


def test_zero_sources_keep_zero_state():
    cab = CableModel.from_line(8, 1e-4, 100.0)
    cfg = LoopConfig(1e3, 1e3, 0.0, 0.0, cab)
    trace, final = simulate_period(cfg, 1e-3, 1e-6)
    assert not np.any(trace.voltages) and not np.any(final.node_voltages)
    s = step(CircuitState.zeros(cab), cfg, 0.0, 1e-6)
    assert not np.any(s.to_vector(cab))


def test_dc_rc_charging_reaches_divider():
    R, C, U0 = 1e3, 1e-6, 2.0
    cab = CableModel(n_segments=1, shunt_capacitance=C, tap_nodes=(0,))
    cfg = LoopConfig(R, R, U0, 0.0, cab)
    tau = (R / 2) * C  # Thevenin resistance of two R in parallel
    trace, final = simulate_period(cfg, 10 * R * C, tau / 200)
    assert final.node_voltages[0] == pytest.approx(U0 * R / (2 * R), rel=1e-3)
    # Against the closed-form exponential halfway through.
    t = trace.t_start + np.arange(len(trace)) * trace.dt
    expect = U0 / 2 * (1 - np.exp(-t / tau))
    assert np.max(np.abs(trace.voltages[0] - expect)) < 1e-3 * U0


def test_step_matches_simulate_period():
    cab = CableModel.from_line(4, 1e-4, 50.0, tap_nodes=(0, 1, 2, 3, 4))
    src = generate_band_limited_gaussian(NoiseSpec(1.0, 1e3), 200, 1e-4, seed=2)
    cfg = LoopConfig(100.0, 300.0, src, 1.5, cab)
    state = CircuitState.zeros(cab)
    for k in range(50):
        state = step(state, cfg, k * 1e-6, 1e-6)
    _, final = simulate_period(cfg, 50e-6, 1e-6)
    np.testing.assert_allclose(state.to_vector(cab), final.to_vector(cab), rtol=1e-9, atol=1e-12)


def test_zero_duration_returns_initial_state():
    cab = CableModel.from_line(4, 1e-4, 50.0)
    init = CircuitState.from_vector(np.arange(cab.state_size, dtype=float), cab)
    trace, final = simulate_period(LoopConfig(1.0, 1.0, 1.0, 1.0, cab), 0.0, 1e-6, init)
    assert len(trace) == 0 and final is init


def test_divergence_detected():
    cab = CableModel.from_line(4, 1e-4, 50.0)
    cfg = LoopConfig(1.0, 1.0, math.nan, 0.0, cab)
    with pytest.raises(SolverDivergenceError):
        simulate_period(cfg, 1e-5, 1e-6)
    with pytest.raises(SolverDivergenceError):
        step(CircuitState.zeros(cab), cfg, 0.0, 1e-6)


@settings(max_examples=20, deadline=None)
@given(
    n=st.integers(1, 12),
    r=st.floats(0.0, 10.0),
    l=st.floats(1e-7, 1e-4),
    c=st.floats(1e-10, 1e-7),
    RA=st.floats(1.0, 1e4),
    RB=st.floats(1.0, 1e4),
    seed=st.integers(0, 1000),
)
def test_passivity_without_sources(n, r, l, c, RA, RB, seed):
    cab = CableModel(n_segments=n, series_resistance=r, series_inductance=l, shunt_capacitance=c)
    x0 = np.random.default_rng(seed).standard_normal(cab.state_size)
    state = CircuitState.from_vector(x0, cab)
    cfg = LoopConfig(RA, RB, 0.0, 0.0, cab)
    dt = math.sqrt(l * c) / 3
    energies = [state.stored_energy(cab)]
    for _ in range(30):
        _, state = simulate_period(cfg, dt, dt, state)
        energies.append(state.stored_energy(cab))
    e = np.array(energies)
    assert np.all(np.diff(e) <= 1e-12 * e[0])


def test_stored_energy_bounded_by_delivered_energy():
    cab = CableModel.from_line(8, 1e-4, 100.0, tap_nodes=(0, 8))
    dt = 2e-7
    src_a = generate_band_limited_gaussian(NoiseSpec(1e3, 2e3), 4000, dt * 50, seed=1)
    cfg = LoopConfig(200.0, 50.0, src_a, 0.7, cab)
    trace, final = simulate_period(cfg, 4000 * dt, dt)
    t = np.arange(len(trace) + 1) * dt
    u_a = np.interp(t, src_a.times, src_a.samples, period=src_a.duration)
    i_a = np.append(trace.i_alice, (u_a[-1] - final.node_voltages[0]) / 200.0)
    i_b = np.append(trace.i_bob, (final.node_voltages[-1] - 0.7) / 50.0)
    power = u_a * i_a - 0.7 * i_b
    delivered = np.cumsum(0.5 * (power[1:] + power[:-1]) * dt)
    assert final.stored_energy(cab) <= delivered[-1] * (1 + 1e-6)


def test_halving_dt_changes_samples_by_under_one_percent():
    cab = CableModel.from_line(16, 1e-4, 100.0, tap_nodes=(0, 1, 8, 16))
    src = generate_band_limited_gaussian(NoiseSpec(1.0, 1e3), 2000, 1e-5, seed=9)
    cfg = LoopConfig(300.0, 3000.0, src, 0.0, cab, LinearRamp(1e-4), LinearRamp(1e-4))
    dt = 2e-7
    coarse, _ = simulate_period(cfg, 1e-3, dt)
    fine, _ = simulate_period(cfg, 1e-3, dt / 2)
    diff = np.abs(coarse.voltages - fine.voltages[:, ::2])
    assert np.max(diff) < 0.01 * np.max(np.abs(fine.voltages))


def test_max_stable_step_positive():
    cab = CableModel.from_line(32, 6e-5, 300.0)
    h = max_stable_step(LoopConfig(1e3, 1e4, 0.0, 0.0, cab))
    assert 0 < h <= 0.1 * 6e-5 / 32 * (1 + 1e-12)


def test_analytic_spectra_oracles():
    for RA, RB in [(1e3, 1e4), (2.0, 7.0), (5e3, 5e3)]:
        sp = analytic_loop_spectra(RA, 1.0, RB, 1.0, k=K)
        assert 1.0 / sp.S_i == pytest.approx(RA + RB, rel=1e-12)
    a = analytic_loop_spectra(1e3, 300.0, 1e4, 900.0)
    b = analytic_loop_spectra(1e4, 900.0, 1e3, 300.0)
    assert a.S_u == pytest.approx(b.S_u, rel=1e-14) and a.S_i == pytest.approx(b.S_i, rel=1e-14)
    z = analytic_loop_spectra(1e3, 0.0, 1e4, 0.0)
    assert z.S_u == 0.0 and z.S_i == 0.0
    with pytest.raises(ValueError):
        analytic_loop_spectra(0.0, 1.0, 1.0, 1.0)


def _ideal_loop(RA, RB, BT, seed, cable=None):
    B, dt = 1e3, 1e-4
    n = int(BT / (B * dt))
    cab = cable or CableModel.ideal()
    a = generate_band_limited_gaussian(NoiseSpec(4 * K * RA, B), n, dt, seed)
    b = generate_band_limited_gaussian(NoiseSpec(4 * K * RB, B), n, dt, seed + 1)
    trace, _ = simulate_period(LoopConfig(RA, RB, a, b, cab), n * dt, dt)
    return trace


def test_simulated_spectra_match_analytic_on_ideal_wire():
    trace = _ideal_loop(1e3, 1e4, 2e4, seed=3)
    want = analytic_loop_spectra(1e3, 1.0, 1e4, 1.0, k=K)
    B = 1e3
    assert band_mean_density(trace.tap(0), B, f_lo=B / 8) == pytest.approx(want.S_u, rel=0.1)
    assert band_mean_density(trace.current(), B, f_lo=B / 8) == pytest.approx(want.S_i, rel=0.1)


def test_single_node_equal_resistors_voltage_spectrum():
    cab = CableModel(n_segments=1, shunt_capacitance=1e-9, tap_nodes=(0,))
    trace = _ideal_loop(1e3, 1e3, 1e4, seed=5, cable=cab)
    want = analytic_loop_spectra(1e3, 1.0, 1e3, 1.0, k=K).S_u
    assert band_mean_density(trace.tap(0), 1e3, f_lo=1e3 / 8) == pytest.approx(want, rel=0.1)


def test_charging_rate_scaling():
    C, B, window = 1e-7, 1e3, 1e-5
    r1 = charging_rate_demo(1e3, C, B, 1.0, window, k=K)
    r4 = charging_rate_demo(4e3, C, B, 1.0, window, k=K)
    assert r1 / r4 == pytest.approx(2.0, rel=0.1)
    # Doubling C halves the early slope; the analytic slope is U_inf / (R C).
    r1c = charging_rate_demo(1e3, 2 * C, B, 1.0, window, k=K)
    assert r1 / r1c == pytest.approx(2.0, rel=0.1)
    u_inf = math.sqrt(4 * K * 1e3 * B)
    assert r1 == pytest.approx(u_inf / (1e3 * C), rel=0.1)
    assert charging_rate_demo(1e3, C, B, 0.0, window, k=K) == 0.0
    with pytest.raises(ValueError, match="0.1\\*R\\*C"):
        charging_rate_demo(1e3, C, B, 1.0, 1e-3, k=K)


def test_early_entry_slope_scales_as_inverse_sqrt_R():
    # Abrupt switch to the noise-RMS DC level sqrt(4kTRB) over a grid of R.
    C, B = 1e-7, 1e3
    Rs = np.array([250.0, 1e3, 4e3, 1.6e4])
    window = 0.1 * Rs.min() * C
    slopes = np.array([charging_rate_demo(R, C, B, 1.0, window, k=K) for R in Rs])
    fit = np.polyfit(np.log(Rs), np.log(slopes), 1)[0]
    assert fit == pytest.approx(-0.5, abs=0.05)


def test_trace_csv(tmp_path):
    cab = CableModel.from_line(4, 1e-4, 50.0, tap_nodes=(0, 2))
    trace, _ = simulate_period(LoopConfig(1.0, 1.0, 1.0, 0.0, cab), 5e-6, 1e-6)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,node_0,node_2,I_entry"
    assert len(lines) == 6
    with pytest.raises(ValueError, match="not recorded"):
        trace.tap(3)
