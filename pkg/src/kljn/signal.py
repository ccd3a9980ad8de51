"""Johnson noise synthesis and the spectral estimators built on it.

Noise is synthesised in the frequency domain: every rfft bin inside the
band gets an independent complex Gaussian coefficient, everything outside
is zero, and an inverse transform gives a brick-wall band-limited,
zero-mean Gaussian record whose one-sided density is flat at ``S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from ._validation import check_count, check_nonnegative, check_positive


@dataclass(frozen=True)
class PhysicalConstants:
    k: float = 1.380649e-23  # J/K

    def __post_init__(self):
        check_positive(self.k, "k")


CONSTANTS = PhysicalConstants()
BOLTZMANN = CONSTANTS.k


def normalized_temperature(k=BOLTZMANN):
    """Temperature for which ``4 k T = 1``, i.e. ``S = R`` numerically."""
    return 1.0 / (4.0 * k)


def johnson_spectral_density(T_eff, R, k=BOLTZMANN):
    """One-sided Johnson voltage noise density ``4 k T R`` in V^2/Hz."""
    T_eff = check_nonnegative(T_eff, "T_eff")
    R = check_nonnegative(R, "R")
    return 4.0 * k * T_eff * R


@dataclass(frozen=True)
class NoiseSpec:
    """Band-limited white noise: density ``spectral_density`` on [0, ``bandwidth``]."""

    spectral_density: float
    bandwidth: float
    effective_temperature: float | None = None
    source_resistance: float | None = None

    def __post_init__(self):
        check_nonnegative(self.spectral_density, "spectral_density")
        check_positive(self.bandwidth, "bandwidth")
        if self.effective_temperature is not None and self.source_resistance is not None:
            expected = johnson_spectral_density(self.effective_temperature, self.source_resistance)
            if not math.isclose(self.spectral_density, expected, rel_tol=1e-9, abs_tol=0.0):
                raise ValueError(
                    "spectral_density must equal 4*k*T_eff*R when both T_eff and R are given"
                )

    @classmethod
    def from_resistor(cls, T_eff, R, bandwidth):
        return cls(johnson_spectral_density(T_eff, R), bandwidth, T_eff, R)

    @property
    def variance(self):
        return self.spectral_density * self.bandwidth


@dataclass(frozen=True)
class SampledSignal:
    samples: np.ndarray = field(repr=False)
    dt: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D sequence")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        check_positive(self.dt, "dt")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size * self.dt

    @property
    def times(self):
        return np.arange(self.samples.size) * self.dt

    def scaled(self, factor):
        return SampledSignal(self.samples * factor, self.dt)


def generate_band_limited_gaussian(spec, n, dt, seed):
    """Draw ``n`` samples of band-limited Gaussian noise with density ``spec``.

    Parameters
    ----------
    spec : NoiseSpec
    n : int
        Number of samples.
    dt : float
        Sample interval in seconds; must satisfy ``dt <= 1/(2B)``.
    seed : int or numpy.random.SeedSequence
        The output is a pure function of ``(spec, n, dt, seed)``.

    Returns
    -------
    SampledSignal
        Zero-mean samples whose variance tends to ``S * B``.
    """
    n = check_count(n, "n", minimum=1)
    dt = check_positive(dt, "dt")
    B = spec.bandwidth
    if dt > 1.0 / (2.0 * B) * (1 + 1e-12):
        raise ValueError(f"Nyquist violated: dt={dt} > 1/(2B)={1.0 / (2.0 * B)}")
    if n * dt * B < 1.0:
        raise ValueError("record too short: need n*dt*B >= 1")
    S = spec.spectral_density
    if S == 0.0:
        return SampledSignal(np.zeros(n), dt)

    rng = np.random.default_rng(seed)
    n_bins = n // 2 + 1
    freqs = np.arange(n_bins) / (n * dt)
    in_band = (freqs > 0) & (freqs <= B * (1 + 1e-12))
    nyquist = n % 2 == 0
    coeffs = np.zeros(n_bins, dtype=complex)
    # Complex bins: Re and Im each N(0, S n / (4 dt)) gives variance S per unit bandwidth.
    sigma = math.sqrt(S * n / (4.0 * dt))
    m = int(np.count_nonzero(in_band))
    draws = rng.standard_normal((2, m)) * sigma
    coeffs[in_band] = draws[0] + 1j * draws[1]
    if nyquist and in_band[-1]:
        # The Nyquist bin is real and counted once by irfft.
        coeffs[-1] = 2.0 * draws[0, -1]
    samples = np.fft.irfft(coeffs, n)
    return SampledSignal(samples, dt)


def estimate_psd(signal, segment_len, overlap=0.5, window="hann"):
    """Welch averaged-periodogram estimate of the one-sided density.

    Returns
    -------
    freqs, density : ndarray
    """
    x = np.asarray(signal.samples if isinstance(signal, SampledSignal) else signal, dtype=float)
    if x.size == 0:
        raise ValueError("cannot estimate the spectrum of an empty signal")
    segment_len = check_count(segment_len, "segment_len", minimum=2)
    if segment_len & (segment_len - 1):
        raise ValueError(f"segment_len must be a power of two, got {segment_len}")
    if segment_len > x.size:
        raise ValueError(f"segment_len={segment_len} exceeds signal length {x.size}")
    fs = 1.0 / signal.dt
    freqs, density = sps.welch(
        x,
        fs=fs,
        window=window,
        nperseg=segment_len,
        noverlap=int(segment_len * overlap),
        detrend=False,
        scaling="density",
    )
    return freqs, density


def band_mean_density(signal, bandwidth, segment_len=None, f_lo=0.0):
    """Mean Welch density over the bins in ``(f_lo, bandwidth]``."""
    if segment_len is None:
        segment_len = default_segment_len(len(signal), signal.dt, bandwidth)
    freqs, density = estimate_psd(signal, segment_len)
    band = (freqs > f_lo) & (freqs <= bandwidth)
    if not np.any(band):
        raise ValueError("no Welch bins inside the measurement band; use longer segments")
    return float(np.mean(density[band]))


def default_segment_len(n, dt, bandwidth, bins_in_band=16):
    """Smallest power of two giving ``bins_in_band`` Welch bins under ``bandwidth``."""
    want = bins_in_band / (bandwidth * dt)
    seg = 1 << max(1, math.ceil(math.log2(want)))
    while seg > n and seg > 2:
        seg >>= 1
    return seg


def mean_square(signal, window=None):
    """Mean of squared samples over ``window`` (a slice or ``(start, stop)``)."""
    x = signal.samples if isinstance(signal, SampledSignal) else np.asarray(signal, dtype=float)
    if window is None:
        window = slice(0, x.size)
    elif not isinstance(window, slice):
        start, stop = window
        if not (0 <= start < stop <= x.size):
            raise ValueError(f"window {window} outside [0, {x.size})")
        window = slice(start, stop)
    part = x[window]
    if part.size == 0:
        raise ValueError("empty mean-square window")
    return float(np.mean(part * part))


def correlation_time(spec_or_bandwidth):
    """First zero of the sinc autocorrelation of ideal band-limited noise, ``1/(2B)``."""
    B = getattr(spec_or_bandwidth, "bandwidth", spec_or_bandwidth)
    B = float(B)
    if not B > 0:
        raise ValueError(f"bandwidth must be > 0, got {B}")
    return 1.0 / (2.0 * B)


def autocorrelation(samples, lag):
    x = np.asarray(samples, dtype=float)
    x = x - x.mean()
    if lag == 0:
        return 1.0
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))
