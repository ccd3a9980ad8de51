import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from kljn.signal import (
    BOLTZMANN,
    CONSTANTS,
    NoiseSpec,
    PhysicalConstants,
    SampledSignal,
    autocorrelation,
    band_mean_density,
    correlation_time,
    estimate_psd,
    generate_band_limited_gaussian,
    johnson_spectral_density,
    mean_square,
)


def test_boltzmann_constant_is_frozen():
    assert CONSTANTS.k == 1.380649e-23
    with pytest.raises(Exception):
        CONSTANTS.k = 1.0
    with pytest.raises(ValueError):
        PhysicalConstants(k=0.0)


def test_johnson_density_hand_value():
    # 4 * 1.380649e-23 * 300 * 1000
    assert johnson_spectral_density(300, 1000) == pytest.approx(1.6567788e-17, rel=1e-7)
    assert johnson_spectral_density(0, 1000) == 0.0


@given(T=st.floats(0, 1e6), R=st.floats(0, 1e9))
def test_johnson_density_linear_in_R(T, R):
    assert johnson_spectral_density(T, 2 * R) == pytest.approx(2 * johnson_spectral_density(T, R))


@pytest.mark.parametrize("T,R", [(-1, 10), (10, -1)])
def test_johnson_density_rejects_negative(T, R):
    with pytest.raises(ValueError, match=">= 0"):
        johnson_spectral_density(T, R)


def test_noise_spec_checks_resistor_consistency():
    NoiseSpec.from_resistor(300, 1e3, 1e4)
    with pytest.raises(ValueError, match="4\\*k\\*T_eff\\*R"):
        NoiseSpec(1.0, 1e4, effective_temperature=300, source_resistance=1e3)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0, 1e4)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, 0.0)


def test_sampled_signal_invariants():
    with pytest.raises(ValueError):
        SampledSignal(np.zeros(0), 1.0)
    with pytest.raises(ValueError):
        SampledSignal(np.zeros(3), 0.0)
    s = SampledSignal([1.0, 2.0], 0.5)
    assert s.duration == 1.0
    with pytest.raises(ValueError):
        s.samples[0] = 3.0


def test_generator_variance_matches_parseval():
    spec = NoiseSpec(1e-12, 1e4)
    dt = 1 / (2 * 1e4)
    n = int(1e4 / (1e4 * dt))  # n*dt*B = 1e4
    x = generate_band_limited_gaussian(spec, n, dt, seed=7)
    assert np.var(x.samples) == pytest.approx(1e-8, rel=0.05)
    # The DC bin is never populated, so the record mean is zero up to round-off.
    assert abs(np.mean(x.samples)) < 1e-9 * math.sqrt(1e-8)


def test_generator_zero_density_and_determinism():
    zero = generate_band_limited_gaussian(NoiseSpec(0.0, 10.0), 100, 0.01, seed=1)
    assert not np.any(zero.samples)
    spec = NoiseSpec(2.0, 10.0)
    a = generate_band_limited_gaussian(spec, 1000, 0.01, seed=3)
    b = generate_band_limited_gaussian(spec, 1000, 0.01, seed=3)
    assert np.array_equal(a.samples, b.samples)


def test_generator_rejects_nyquist_violation_and_short_records():
    with pytest.raises(ValueError, match="Nyquist"):
        generate_band_limited_gaussian(NoiseSpec(1.0, 10.0), 1000, 0.1, seed=0)
    with pytest.raises(ValueError, match="too short"):
        generate_band_limited_gaussian(NoiseSpec(1.0, 10.0), 5, 0.01, seed=0)


def test_generator_gaussian_and_independent():
    spec = NoiseSpec(1.0, 100.0)
    a = generate_band_limited_gaussian(spec, 200_000, 1 / 400, seed=1).samples
    b = generate_band_limited_gaussian(spec, 200_000, 1 / 400, seed=2).samples
    assert stats.kurtosis(a, fisher=False) == pytest.approx(3.0, abs=0.1)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


@settings(max_examples=15, deadline=None)
@given(
    S=st.floats(1e-20, 1e3),
    B=st.floats(10.0, 1e5),
    oversample=st.integers(2, 8),
    seed=st.integers(0, 2**32),
)
def test_variance_spectrum_consistency_property(S, B, oversample, seed):
    dt = 1 / (oversample * B)
    n = int(math.ceil(2e4 / (B * dt)))
    x = generate_band_limited_gaussian(NoiseSpec(S, B), n, dt, seed)
    assert 0.95 <= np.var(x.samples) / (S * B) <= 1.05


def test_psd_round_trip_and_out_of_band():
    spec = NoiseSpec(1e-12, 1e3)
    dt = 1 / 4000
    x = generate_band_limited_gaussian(spec, 1 << 16, dt, seed=11)
    freqs, dens = estimate_psd(x, 1024)  # 127 segments
    df = freqs[1]
    band = (freqs >= 2 * df) & (freqs <= 1e3 - 2 * df)
    assert np.mean(dens[band]) == pytest.approx(1e-12, rel=0.1)
    assert np.mean(dens[freqs > 1.1e3]) < 1e-3 * 1e-12
    assert band_mean_density(x, 1e3) == pytest.approx(1e-12, rel=0.1)


def test_psd_of_sinusoid_peaks_at_its_frequency():
    dt, n, f0 = 1e-3, 1 << 14, 125.0
    x = SampledSignal(np.sin(2 * np.pi * f0 * np.arange(n) * dt), dt)
    freqs, dens = estimate_psd(x, 1024)
    assert freqs[np.argmax(dens)] == pytest.approx(f0)


def test_psd_zero_signal_and_errors():
    freqs, dens = estimate_psd(SampledSignal(np.zeros(256), 1.0), 64)
    assert not np.any(dens)
    with pytest.raises(ValueError, match="power of two"):
        estimate_psd(SampledSignal(np.zeros(256), 1.0), 100)
    with pytest.raises(ValueError, match="empty"):
        estimate_psd(np.zeros(0), 64)


def test_mean_square_examples():
    assert mean_square(SampledSignal(np.full(10, 3.0), 1.0)) == 9.0
    assert mean_square(SampledSignal(np.array([1.0, -1.0] * 5), 1.0)) == 1.0
    assert mean_square(SampledSignal(np.arange(4.0), 1.0), (2, 4)) == pytest.approx(6.5)
    with pytest.raises(ValueError):
        mean_square(SampledSignal(np.arange(4.0), 1.0), (2, 2))
    spec = NoiseSpec(3.0, 50.0)
    x = generate_band_limited_gaussian(spec, 80_000, 1 / 200, seed=4)  # BT = 2e4
    assert mean_square(x) == pytest.approx(150.0, rel=0.05)


def test_correlation_time():
    assert correlation_time(NoiseSpec(1.0, 5000.0)) == pytest.approx(1e-4)
    assert correlation_time(1e4) == pytest.approx(0.5 * correlation_time(5e3))
    with pytest.raises(ValueError):
        correlation_time(0.0)


def test_autocorrelation_vanishes_at_correlation_time():
    B, dt = 1e3, 1 / 1e4
    x = generate_band_limited_gaussian(NoiseSpec(1.0, B), 200_000, dt, seed=5)  # BT = 2e4
    lag = int(round(correlation_time(B) / dt))
    assert abs(autocorrelation(x.samples, lag)) < 0.05
    assert autocorrelation(x.samples, 0) == 1.0


def test_boltzmann_alias():
    assert BOLTZMANN == CONSTANTS.k
