"""KLJN and RRRT-KLJN bit exchange.

One bit period: both parties pick a resistor (and, in RRRT, a temperature),
switch their noise sources onto the cable, the loop is integrated for
``bit_period`` seconds carrying the cable state over from the previous
period, and each party infers the remote resistor from the spectra it sees.

Every period is integrated in two pieces: a finely sampled stretch right
after switching (kept on ``trace.early`` for transient analysis) and the
coarsely sampled remainder.  The returned trace covers the whole period on
the coarse grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_positive
from .circuit import Abrupt, CableModel, CircuitState, LinearRamp, LoopConfig, Trace, simulate_period
from .signal import BOLTZMANN, NoiseSpec, estimate_psd, generate_band_limited_gaussian

L, H = "L", "H"
BIT_VALUE = {L: 0, H: 1}


class EstimationError(ValueError):
    """A measurement produced a non-physical estimate."""


def _switching_envelope(mode, ramp_time):
    if mode == "abrupt":
        return Abrupt()
    if mode == "symmetric_ramp":
        return LinearRamp(ramp_time)
    raise ValueError(f"unknown switching_mode {mode!r}; use 'abrupt' or 'symmetric_ramp'")


@dataclass(frozen=True)
class _Timing:
    """Shared timing fields of both protocol flavours."""

    def _check_timing(self):
        check_positive(self.bandwidth, "bandwidth")
        check_positive(self.bit_period, "bit_period")
        if self.bit_period * self.bandwidth < 100 * (1 - 1e-12):
            raise ValueError("bit_period * bandwidth must be >= 100")
        if self.switching_mode == "symmetric_ramp":
            if self.ramp_time is None:
                raise ValueError("symmetric_ramp needs ramp_time")
            check_positive(self.ramp_time, "ramp_time")
            if self.ramp_time >= self.bit_period:
                raise ValueError("ramp_time must be shorter than bit_period")
        _switching_envelope(self.switching_mode, self.ramp_time)
        if self.dt > 1.0 / (2.0 * self.bandwidth):
            raise ValueError("dt must resolve the noise band (dt <= 1/(2B))")
        steps = self.bit_period / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("bit_period must be a whole number of dt steps")
        ratio = self.dt / self.fine_dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("dt must be a whole multiple of fine_dt")
        if self.fine_window > 0:
            w = self.fine_window / self.dt
            if abs(w - round(w)) > 1e-6 or self.fine_window >= self.bit_period:
                raise ValueError("fine_window must be a whole number of dt steps below bit_period")

    @property
    def dt(self):
        return self.coarse_dt if self.coarse_dt is not None else 1.0 / (100.0 * self.bandwidth)

    @property
    def fine_dt(self):
        return self.attack_dt if self.attack_dt is not None else 1.0 / (2000.0 * self.bandwidth)

    @property
    def n_samples(self):
        return int(round(self.bit_period / self.dt))

    @property
    def envelope(self):
        return _switching_envelope(self.switching_mode, self.ramp_time)


@dataclass(frozen=True)
class KljnParams(_Timing):
    """Plain KLJN settings.

    ``fine_window`` is the stretch after switching recorded at ``fine_dt``
    (0 disables it); ``k`` may be set to 0.25 for normalized units where
    ``T_eff = 1`` means ``4kT = 1``.
    """

    R_L: float = 1e3
    R_H: float = 1e4
    T_eff: float = 1.0
    bandwidth: float = 1e3
    bit_period: float = 10.0
    switching_mode: str = "abrupt"
    ramp_time: float | None = None
    cable: CableModel = field(default_factory=CableModel.ideal)
    coarse_dt: float | None = None
    attack_dt: float | None = None
    fine_window: float = 0.0
    k: float = BOLTZMANN

    def __post_init__(self):
        check_positive(self.R_L, "R_L")
        check_positive(self.R_H, "R_H")
        if not self.R_L < self.R_H:
            raise ValueError("need 0 < R_L < R_H")
        check_positive(self.T_eff, "T_eff")
        check_positive(self.k, "k")
        self._check_timing()

    def resistor(self, bit):
        return self.R_L if bit == L else self.R_H


@dataclass(frozen=True)
class RrrtParams(_Timing):
    """Random-resistance random-temperature settings (log-uniform draws)."""

    R_min: float = 3e3
    R_max: float = 4e3
    T_min: float = 0.1
    T_max: float = 10.0
    draw_distribution: str = "log-uniform"
    resolution_threshold: float = 0.02
    bandwidth: float = 1e3
    bit_period: float = 10.0
    switching_mode: str = "abrupt"
    ramp_time: float | None = None
    cable: CableModel = field(default_factory=CableModel.ideal)
    coarse_dt: float | None = None
    attack_dt: float | None = None
    fine_window: float = 0.0
    k: float = BOLTZMANN

    def __post_init__(self):
        check_positive(self.R_min, "R_min")
        check_positive(self.T_min, "T_min")
        if not self.R_min < self.R_max:
            raise ValueError("need 0 < R_min < R_max")
        if not self.T_min < self.T_max:
            raise ValueError("need 0 < T_min < T_max")
        if self.draw_distribution != "log-uniform":
            raise ValueError("only the 'log-uniform' draw distribution is supported")
        t = float(self.resolution_threshold)
        if not 0 < t < 0.5:
            raise ValueError(f"resolution_threshold must lie in (0, 0.5), got {t}")
        check_positive(self.k, "k")
        self._check_timing()

    def draw(self, rng):
        """One ``(R, T)`` pair."""
        R = math.exp(rng.uniform(math.log(self.R_min), math.log(self.R_max)))
        T = math.exp(rng.uniform(math.log(self.T_min), math.log(self.T_max)))
        return R, T


@dataclass(frozen=True)
class Decision:
    remote: str
    discard: bool


@dataclass(frozen=True)
class PeriodOutcome:
    alice_bit: str
    bob_bit: str
    kept: bool
    alice_decision: str
    bob_decision: str
    error: bool
    R_A: float = math.nan
    R_B: float = math.nan
    T_A: float = math.nan
    T_B: float = math.nan

    @property
    def pair_class(self):
        return self.alice_bit + self.bob_bit


@dataclass
class ProtocolStats:
    n_periods: int
    n_kept: int
    n_errors: int
    key: str
    outcomes: list = field(default_factory=list, repr=False)

    @property
    def bit_error_rate(self):
        return self.n_errors / self.n_kept if self.n_kept else 0.0

    q = bit_error_rate

    @property
    def ci95(self):
        from .harness.stats import wilson_interval

        return wilson_interval(self.n_errors, self.n_kept)


# --- one period ---------------------------------------------------------------


def _run_loop(params, R_A, T_A, R_B, T_B, seeds, prev_state):
    n = params.n_samples
    dt = params.dt
    sources = []
    for R, T, seed in ((R_A, T_A, seeds[0]), (R_B, T_B, seeds[1])):
        spec = NoiseSpec(4.0 * params.k * T * R, params.bandwidth)
        sources.append(generate_band_limited_gaussian(spec, n, dt, seed))
    env = params.envelope
    config = LoopConfig(R_A, R_B, sources[0], sources[1], params.cable, env, env)
    state = prev_state if prev_state is not None else CircuitState.zeros(params.cable)
    early = None
    t0 = 0.0
    parts = []
    if params.fine_window > 0:
        early, state = simulate_period(config, params.fine_window, params.fine_dt, state)
        ratio = int(round(dt / params.fine_dt))
        parts.append(early)
        t0 = params.fine_window
    rest, state = simulate_period(config, params.bit_period - t0, dt, state, t_start=t0)
    if early is None:
        trace = rest
    else:
        trace = Trace(
            rest.taps,
            np.concatenate([early.voltages[:, ::ratio], rest.voltages], axis=1),
            np.concatenate([early.i_alice[::ratio], rest.i_alice]),
            np.concatenate([early.i_bob[::ratio], rest.i_bob]),
            dt,
            0.0,
            early,
        )
    return trace, state


def _period_seeds(rng_seed):
    ss = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    draw, noise_a, noise_b = ss.spawn(3)
    return np.random.default_rng(draw), (noise_a, noise_b)


def _band_density(signal, bandwidth):
    """Mean Welch density over interior in-band bins (two guard bins each side)."""
    n = len(signal)
    seg = 1 << max(1, math.ceil(math.log2(32 / (bandwidth * signal.dt))))
    while seg > n:
        seg >>= 1
    freqs, dens = estimate_psd(signal, seg)
    df = freqs[1]
    band = (freqs >= 2 * df - 1e-9 * df) & (freqs <= bandwidth - 2 * df + 1e-9 * df)
    if not np.any(band):
        raise EstimationError("record too short for an in-band spectral estimate")
    return float(np.mean(dens[band]))


def loop_resistance(S_i, T_eff, k=BOLTZMANN):
    """Johnson formula for the loop: ``4 k T_eff / S_i``."""
    if not S_i > 0:
        raise EstimationError("current density must be > 0")
    return 4.0 * k * T_eff / S_i


def measure_loop_resistance(trace, T_eff, bandwidth, k=BOLTZMANN, side="alice"):
    """Loop resistance from the mean in-band current density seen at one entry."""
    if len(trace) * trace.dt * bandwidth < 100 * (1 - 1e-9):
        raise ValueError("trace too short: need length*dt*B >= 100")
    return loop_resistance(_band_density(trace.current(side), bandwidth), T_eff, k)


def decide_bit(R_loop_est, own_R, params):
    """Nearest public value for the remote resistor; equal bits mean discard."""
    if own_R not in (params.R_L, params.R_H):
        raise ValueError("own_R must be R_L or R_H")
    remote = R_loop_est - own_R
    if not R_loop_est > 0:
        raise EstimationError(f"non-positive loop resistance estimate {R_loop_est}")
    midpoint = 0.5 * (params.R_L + params.R_H)
    remote_bit = L if remote <= midpoint else H
    own_bit = L if own_R == params.R_L else H
    return Decision(remote_bit, remote_bit == own_bit)


def run_kljn_period(params, rng_seed, prev_state=None, force=None):
    """Simulate one KLJN bit period.

    Parameters
    ----------
    force : tuple of two bits, optional
        Overrides the random ``(alice_bit, bob_bit)`` draw.

    Returns
    -------
    trace, outcome, final_state
    """
    rng, seeds = _period_seeds(rng_seed)
    bits = (L if rng.integers(2) == 0 else H, L if rng.integers(2) == 0 else H)
    if force is not None:
        bits = tuple(force)
    a_bit, b_bit = bits
    R_A, R_B = params.resistor(a_bit), params.resistor(b_bit)
    trace, state = _run_loop(params, R_A, params.T_eff, R_B, params.T_eff, seeds, prev_state)
    args = (params.T_eff, params.bandwidth, params.k)
    a_dec = decide_bit(measure_loop_resistance(trace, *args, side="alice"), R_A, params)
    b_dec = decide_bit(measure_loop_resistance(trace, *args, side="bob"), R_B, params)
    outcome = PeriodOutcome(
        alice_bit=a_bit,
        bob_bit=b_bit,
        kept=a_bit != b_bit,
        alice_decision=a_dec.remote,
        bob_decision=b_dec.remote,
        error=a_dec.remote != b_bit or b_dec.remote != a_bit,
        R_A=R_A, R_B=R_B, T_A=params.T_eff, T_B=params.T_eff,
    )
    return trace, outcome, state


# --- RRRT ------------------------------------------------------------------


def solve_remote_parameters(S_u_meas, S_i_meas, own_R, own_T, k=BOLTZMANN):
    """Remote ``(R, T)`` from the ideal-wire spectra and one's own values.

    With ``D = S_u - R_own^2 S_i`` and ``K = 4 k T_own R_own`` the loop
    equations give ``D / K = (R - R_own) / (R + R_own)``, which is linear
    in the remote resistance; the remote temperature follows from ``S_i``.
    """
    S_u = check_positive(S_u_meas, "S_u_meas")
    S_i = check_positive(S_i_meas, "S_i_meas")
    R_a = check_positive(own_R, "own_R")
    T_a = check_positive(own_T, "own_T")
    K = 4.0 * k * T_a * R_a
    ratio = (S_u - R_a * R_a * S_i) / K
    if not -1.0 < ratio < 1.0:
        raise EstimationError("spectra imply a non-positive remote resistance")
    R_b = R_a * (1.0 + ratio) / (1.0 - ratio)
    T_b = (S_i * (R_a + R_b) ** 2 / (4.0 * k) - T_a * R_a) / R_b
    if not T_b > 0:
        raise EstimationError("spectra imply a non-positive remote temperature")
    return R_b, T_b


def _rrrt_view(trace, side, own_R, own_T, params):
    node = 0 if side == "alice" else params.cable.n_segments
    try:
        S_u = _band_density(trace.tap(node), params.bandwidth)
        S_i = _band_density(trace.current(side), params.bandwidth)
        return solve_remote_parameters(S_u, S_i, own_R, own_T, params.k)[0]
    except (EstimationError, ValueError):
        return None


def run_rrrt_period(params, rng_seed, prev_state=None, force=None):
    """Simulate one RRRT-KLJN period.

    ``force`` may fix ``((R_A, T_A), (R_B, T_B))``.  The party with the
    higher resistance holds bit H.  A party discards when its remote
    estimate is within ``resolution_threshold`` of its own value or cannot
    be computed; the period is kept only if neither discards.
    """
    cable = params.cable
    if 0 not in cable.tap_nodes or cable.n_segments not in cable.tap_nodes:
        raise ValueError("RRRT needs the cable end nodes among tap_nodes")
    rng, seeds = _period_seeds(rng_seed)
    (R_A, T_A), (R_B, T_B) = params.draw(rng), params.draw(rng)
    if force is not None:
        (R_A, T_A), (R_B, T_B) = force
    trace, state = _run_loop(params, R_A, T_A, R_B, T_B, seeds, prev_state)

    thr = params.resolution_threshold
    views = []
    for side, own_R, own_T in (("alice", R_A, T_A), ("bob", R_B, T_B)):
        est = _rrrt_view(trace, side, own_R, own_T, params)
        if est is None or abs(est - own_R) < thr * max(est, own_R):
            views.append((None, True))
        else:
            views.append((H if est > own_R else L, False))
    a_bit = H if R_A > R_B else L
    b_bit = H if R_B > R_A else L
    kept = not (views[0][1] or views[1][1]) and R_A != R_B
    a_dec = views[0][0] or "?"
    b_dec = views[1][0] or "?"
    outcome = PeriodOutcome(
        alice_bit=a_bit,
        bob_bit=b_bit,
        kept=kept,
        alice_decision=a_dec,
        bob_decision=b_dec,
        error=kept and (a_dec != b_bit or b_dec != a_bit),
        R_A=R_A, R_B=R_B, T_A=T_A, T_B=T_B,
    )
    return trace, outcome, state


# --- runs -----------------------------------------------------------------


def iter_periods(params, n_periods, rng_seed, burn_in=0):
    """Yield ``(trace, outcome)`` for a chain of periods with state carry-over.

    Period ``j`` draws from ``SeedSequence([*rng_seed, j])`` (``rng_seed``
    is an int or a tuple of ints), so a chain is a pure function of its seed.  The first ``burn_in`` periods only charge
    the cable and are not yielded.
    """
    n_periods = check_count(n_periods, "n_periods", minimum=0)
    run = run_rrrt_period if isinstance(params, RrrtParams) else run_kljn_period
    base = [int(s) for s in rng_seed] if isinstance(rng_seed, (tuple, list)) else [int(rng_seed)]
    state = None
    for j in range(burn_in + n_periods):
        trace, outcome, state = run(params, np.random.SeedSequence([*base, j]), state)
        if j >= burn_in:
            yield trace, outcome


def run_exchange(params, n_periods, rng_seed):
    outcomes = [o for _, o in iter_periods(params, n_periods, rng_seed)]
    return summarize(outcomes)


def summarize(outcomes):
    kept = [o for o in outcomes if o.kept]
    key = "".join(str(BIT_VALUE[o.alice_bit]) for o in kept)
    return ProtocolStats(
        n_periods=len(outcomes),
        n_kept=len(kept),
        n_errors=sum(o.error for o in kept),
        key=key,
        outcomes=list(outcomes),
    )


def estimate_bit_error(params, n_periods, rng_seed):
    """Monte Carlo bit-error rate over kept periods."""
    check_count(n_periods, "n_periods", minimum=100)
    return run_exchange(params, n_periods, rng_seed)


def export_key(stats, path):
    """Write the kept key bits as one line of 0/1 characters (no newline)."""
    with open(path, "w") as fh:
        fh.write(stats.key)


def export_stats_csv(stats, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "class", "kept", "alice_decision", "bob_decision", "error"])
        for j, o in enumerate(stats.outcomes):
            writer.writerow([j, o.pair_class, int(o.kept), o.alice_decision, o.bob_decision, int(o.error)])
