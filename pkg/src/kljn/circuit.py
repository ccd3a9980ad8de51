"""Time-domain solver for the Alice - cable - Bob loop.

The cable is a lumped ladder: ``n_segments`` series branches (r, l) joining
``n_segments + 1`` nodes, each node carrying its share of the shunt
capacitance (``c/2`` at the two ends, ``c`` inside).  Alice's source and
resistor drive node 0, Bob's drive the last node.  A single segment with no
series impedance collapses to one node of capacitance ``c``.

Unknowns are stored interleaved, ``[v0, i0, v1, i1, ..., vN]``, which makes
the trapezoidal update matrix tridiagonal; long runs go through a compiled
Thomas-algorithm kernel, single steps through ``scipy.linalg.solve_banded``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import solve_banded

from ._validation import check_count, check_nonnegative, check_positive
from .signal import BOLTZMANN, SampledSignal


class SolverDivergenceError(RuntimeError):
    """Raised when the integrated state stops being finite."""


@dataclass(frozen=True)
class CableModel:
    n_segments: int = 32
    series_resistance: float = 0.0
    series_inductance: float = 0.0
    shunt_capacitance: float = 0.0
    tap_nodes: tuple = (0, 1)

    def __post_init__(self):
        check_count(self.n_segments, "n_segments", minimum=1)
        check_nonnegative(self.series_resistance, "series_resistance")
        check_nonnegative(self.series_inductance, "series_inductance")
        check_nonnegative(self.shunt_capacitance, "shunt_capacitance")
        if self.n_segments > 1 and self.series_resistance == 0 and self.series_inductance == 0:
            raise ValueError(
                "a ladder with n_segments > 1 needs series inductance or resistance > 0"
            )
        taps = tuple(sorted({int(t) for t in self.tap_nodes}))
        for t in taps:
            if not 0 <= t <= self.n_segments:
                raise ValueError(f"tap node {t} outside 0..{self.n_segments}")
        object.__setattr__(self, "tap_nodes", taps)

    @classmethod
    def from_line(cls, n_segments, delay, impedance, total_resistance=0.0, tap_nodes=None):
        """Ladder approximating a line of one-way ``delay`` and impedance ``impedance``."""
        check_positive(delay, "delay")
        check_positive(impedance, "impedance")
        per = delay / n_segments
        if tap_nodes is None:
            tap_nodes = (0, 1, n_segments // 2, n_segments)
        return cls(
            n_segments=n_segments,
            series_resistance=total_resistance / n_segments,
            series_inductance=impedance * per,
            shunt_capacitance=per / impedance,
            tap_nodes=tap_nodes,
        )

    @classmethod
    def ideal(cls, capacitance=0.0):
        """Zero-length wire: a single node, purely resistive unless ``capacitance`` > 0."""
        return cls(n_segments=1, shunt_capacitance=capacitance, tap_nodes=(0, 1))

    @property
    def merged(self):
        return self.n_segments == 1 and self.series_resistance == 0 and self.series_inductance == 0

    @property
    def n_nodes(self):
        return 1 if self.merged else self.n_segments + 1

    @property
    def total_capacitance(self):
        return self.n_segments * self.shunt_capacitance

    @property
    def delay(self):
        return self.n_segments * math.sqrt(self.series_inductance * self.shunt_capacitance)

    @property
    def impedance(self):
        if self.shunt_capacitance == 0:
            return math.inf
        return math.sqrt(self.series_inductance / self.shunt_capacitance)

    def state_index(self, node):
        """Position of cable node ``node`` in the interleaved state vector."""
        if not 0 <= node <= self.n_segments:
            raise ValueError(f"node {node} outside 0..{self.n_segments}")
        return 0 if self.merged else 2 * node

    @property
    def state_size(self):
        return 1 if self.merged else 2 * self.n_segments + 1

    def node_capacitances(self):
        c = self.shunt_capacitance
        if self.merged:
            return np.array([c])
        caps = np.full(self.n_segments + 1, c)
        caps[0] = caps[-1] = c / 2
        return caps


class Abrupt:
    """Full amplitude from the switching instant on."""

    def __call__(self, t):
        return np.where(np.asarray(t) >= 0.0, 1.0, 0.0)

    def __repr__(self):
        return "Abrupt()"

    def __eq__(self, other):
        return isinstance(other, Abrupt)


class LinearRamp:
    """Amplitude rising linearly from 0 to 1 over ``ramp_time``."""

    def __init__(self, ramp_time):
        self.ramp_time = check_positive(ramp_time, "ramp_time")

    def __call__(self, t):
        return np.clip(np.asarray(t, dtype=float) / self.ramp_time, 0.0, 1.0)

    def __repr__(self):
        return f"LinearRamp({self.ramp_time!r})"

    def __eq__(self, other):
        return isinstance(other, LinearRamp) and other.ramp_time == self.ramp_time


@dataclass
class LoopConfig:
    R_A: float
    R_B: float
    source_A: SampledSignal | float
    source_B: SampledSignal | float
    cable: CableModel
    envelope_A: object = field(default_factory=Abrupt)
    envelope_B: object = field(default_factory=Abrupt)

    def __post_init__(self):
        check_positive(self.R_A, "R_A")
        check_positive(self.R_B, "R_B")


@dataclass(frozen=True)
class CircuitState:
    node_voltages: np.ndarray
    inductor_currents: np.ndarray

    @classmethod
    def zeros(cls, cable):
        n_branch = 0 if cable.merged else cable.n_segments
        return cls(np.zeros(cable.n_nodes), np.zeros(n_branch))

    @classmethod
    def from_vector(cls, x, cable):
        x = np.asarray(x, dtype=float)
        if cable.merged:
            return cls(x[:1].copy(), np.zeros(0))
        return cls(x[0::2].copy(), x[1::2].copy())

    def to_vector(self, cable):
        if self.node_voltages.size != cable.n_nodes:
            raise ValueError("state dimension does not match the cable")
        x = np.empty(cable.state_size)
        if cable.merged:
            x[0] = self.node_voltages[0]
        else:
            x[0::2] = self.node_voltages
            x[1::2] = self.inductor_currents
        return x

    def voltage(self, cable, node):
        return float(self.node_voltages[0 if cable.merged else node])

    def stored_energy(self, cable):
        caps = cable.node_capacitances()
        e = 0.5 * float(np.sum(caps * self.node_voltages**2))
        if self.inductor_currents.size:
            e += 0.5 * cable.series_inductance * float(np.sum(self.inductor_currents**2))
        return e


@dataclass(frozen=True)
class Trace:
    """Tap voltages and entry currents sampled at ``t_start + k*dt``.

    ``i_alice`` flows from Alice's resistor into the cable, ``i_bob`` from
    the cable into Bob's resistor; on an ideal wire they coincide.
    """

    taps: tuple
    voltages: np.ndarray
    i_alice: np.ndarray
    i_bob: np.ndarray
    dt: float
    t_start: float = 0.0
    early: "Trace | None" = None

    def __len__(self):
        return self.i_alice.size

    @property
    def duration(self):
        return len(self) * self.dt

    def tap(self, node):
        try:
            row = self.taps.index(node)
        except ValueError:
            raise ValueError(f"node {node} was not recorded (taps {self.taps})") from None
        return SampledSignal(self.voltages[row], self.dt)

    def current(self, side="alice"):
        return SampledSignal(self.i_alice if side == "alice" else self.i_bob, self.dt)

    def to_csv(self, path):
        times = self.t_start + np.arange(len(self)) * self.dt
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *(f"node_{n}" for n in self.taps), "I_entry"])
            for k in range(len(self)):
                writer.writerow(
                    [repr(float(times[k])), *(repr(float(v)) for v in self.voltages[:, k]),
                     repr(float(self.i_alice[k]))]
                )


@dataclass(frozen=True)
class SpectraPair:
    S_u: float
    S_i: float


def analytic_loop_spectra(R_A, T_A, R_B, T_B, k=BOLTZMANN):
    """Wire voltage and loop current densities for a zero-impedance wire."""
    R_A = check_positive(R_A, "R_A")
    R_B = check_positive(R_B, "R_B")
    T_A = check_nonnegative(T_A, "T_A")
    T_B = check_nonnegative(T_B, "T_B")
    denom = (R_A + R_B) ** 2
    S_i = 4 * k * (T_A * R_A + T_B * R_B) / denom
    S_u = 4 * k * (T_A * R_A * R_B**2 + T_B * R_B * R_A**2) / denom
    return SpectraPair(S_u=S_u, S_i=S_i)


# --- discretisation -------------------------------------------------------


@dataclass(frozen=True)
class _Discretization:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    m_lower: np.ndarray
    m_diag: np.ndarray
    m_upper: np.ndarray
    row_a: int
    row_b: int
    weights: tuple  # (wA_now, wA_next, wB_now, wB_next)
    g_a: float
    g_b: float


def _discretize(cable, R_A, R_B, dt):
    n = cable.state_size
    E = np.zeros(n)
    G_d = np.zeros(n)
    G_lo = np.zeros(n)  # G[i, i-1]
    G_up = np.zeros(n)  # G[i, i+1]
    caps = cable.node_capacitances()
    g_a, g_b = 1.0 / R_A, 1.0 / R_B
    row_a = 0
    row_b = cable.state_index(cable.n_segments)
    if cable.merged:
        E[0] = caps[0]
    else:
        E[0::2] = caps
        E[1::2] = cable.series_inductance
        G_d[1::2] = cable.series_resistance
        # node k: ... + i_k - i_{k-1};  branch k: ... - v_k + v_{k+1}
        G_lo[2::2] = -1.0
        G_up[0:-1:2] = 1.0
        G_lo[1::2] = -1.0
        G_up[1::2] = 1.0
    G_d[row_a] += g_a
    G_d[row_b] += g_b

    dynamic = E > 0
    half = np.where(dynamic, 0.5, 1.0)
    lower = half * G_lo
    diag = E / dt + half * G_d
    upper = half * G_up
    keep = np.where(dynamic, 1.0, 0.0)
    m_lower = -keep * 0.5 * G_lo
    m_diag = keep * (E / dt - 0.5 * G_d)
    m_upper = -keep * 0.5 * G_up

    def w(row, g):
        return (0.5 * g, 0.5 * g) if dynamic[row] else (0.0, g)

    wa = w(row_a, g_a)
    wb = w(row_b, g_b)
    return _Discretization(
        lower, diag, upper, m_lower, m_diag, m_upper, row_a, row_b,
        (wa[0], wa[1], wb[0], wb[1]), g_a, g_b,
    )


@numba.njit(cache=True)
def _run_kernel(lower, diag, upper, m_lower, m_diag, m_upper,
                row_a, row_b, wa0, wa1, wb0, wb1, g_a, g_b,
                u_a, u_b, x0, rec_idx):
    n = diag.size
    n_steps = u_a.size - 1
    n_rec = rec_idx.size
    rec = np.empty((n_rec, n_steps))
    i_a = np.empty(n_steps)
    i_b = np.empty(n_steps)
    # Thomas factorisation, reused every step.
    cp = np.empty(n)
    den = np.empty(n)
    den[0] = diag[0]
    cp[0] = upper[0] / den[0]
    for i in range(1, n):
        den[i] = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / den[i]
    x = x0.copy()
    d = np.empty(n)
    for k in range(n_steps):
        for j in range(n_rec):
            rec[j, k] = x[rec_idx[j]]
        i_a[k] = g_a * (u_a[k] - x[row_a])
        i_b[k] = g_b * (x[row_b] - u_b[k])
        for i in range(n):
            acc = m_diag[i] * x[i]
            if i > 0:
                acc += m_lower[i] * x[i - 1]
            if i < n - 1:
                acc += m_upper[i] * x[i + 1]
            d[i] = acc
        d[row_a] += wa0 * u_a[k] + wa1 * u_a[k + 1]
        d[row_b] += wb0 * u_b[k] + wb1 * u_b[k + 1]
        d[0] = d[0] / den[0]
        for i in range(1, n):
            d[i] = (d[i] - lower[i] * d[i - 1]) / den[i]
        x[n - 1] = d[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = d[i] - cp[i] * x[i + 1]
    return rec, i_a, i_b, x


def _source_values(source, envelope, times):
    if isinstance(source, SampledSignal):
        base = np.interp(times, source.times, source.samples, period=source.duration)
    else:
        base = np.full(times.shape, float(source))
    return base * envelope(times)


def max_stable_step(config):
    """``0.1 x`` the fastest lumped time constant of the loop."""
    cable = config.cable
    caps = cable.node_capacitances()
    taus = []
    if caps[0] > 0:
        taus.append(config.R_A * caps[0])
    if caps[-1] > 0:
        taus.append(config.R_B * caps[-1])
    if not cable.merged:
        l, c = cable.series_inductance, cable.shunt_capacitance
        if l > 0 and c > 0:
            taus.append(math.sqrt(l * c))
        if l > 0 and cable.series_resistance > 0:
            taus.append(l / cable.series_resistance)
        if l == 0 and c > 0:
            taus.append(cable.series_resistance * c)
    return 0.1 * min(taus) if taus else math.inf


def step(state, config, t, dt):
    """Advance ``state`` from ``t`` to ``t + dt`` with one trapezoidal step."""
    dt = check_positive(dt, "dt")
    cable = config.cable
    disc = _discretize(cable, config.R_A, config.R_B, dt)
    x = state.to_vector(cable)
    times = np.array([t, t + dt])
    u_a = _source_values(config.source_A, config.envelope_A, times)
    u_b = _source_values(config.source_B, config.envelope_B, times)
    d = disc.m_diag * x
    d[1:] += disc.m_lower[1:] * x[:-1]
    d[:-1] += disc.m_upper[:-1] * x[1:]
    wa0, wa1, wb0, wb1 = disc.weights
    d[disc.row_a] += wa0 * u_a[0] + wa1 * u_a[1]
    d[disc.row_b] += wb0 * u_b[0] + wb1 * u_b[1]
    n = x.size
    if n == 1:
        x_new = d / disc.diag
    else:
        ab = np.zeros((3, n))
        ab[0, 1:] = disc.upper[:-1]
        ab[1] = disc.diag
        ab[2, :-1] = disc.lower[1:]
        x_new = solve_banded((1, 1), ab, d, check_finite=False)
    if not np.all(np.isfinite(x_new)):
        raise SolverDivergenceError(f"non-finite state at t={t + dt}")
    return CircuitState.from_vector(x_new, cable)


def simulate_period(config, duration, dt, initial=None, t_start=0.0, taps=None):
    """Integrate the loop over ``duration`` seconds.

    Sources are evaluated at ``t_start + k*dt`` (sampled sources are treated
    as periodic and interpolated linearly; envelopes take the same time
    argument).  Returns ``(trace, final_state)``; the trace holds the state
    at the start of every step, so its first sample is the carried-over one.
    """
    dt = check_positive(dt, "dt")
    cable = config.cable
    if initial is None:
        initial = CircuitState.zeros(cable)
    taps = cable.tap_nodes if taps is None else tuple(taps)
    n_steps = int(round(check_nonnegative(duration, "duration") / dt))
    if n_steps == 0:
        empty = np.zeros((len(taps), 0))
        return Trace(taps, empty, np.zeros(0), np.zeros(0), dt, t_start), initial
    disc = _discretize(cable, config.R_A, config.R_B, dt)
    times = t_start + np.arange(n_steps + 1) * dt
    u_a = _source_values(config.source_A, config.envelope_A, times)
    u_b = _source_values(config.source_B, config.envelope_B, times)
    rec_idx = np.array([cable.state_index(t) for t in taps], dtype=np.int64)
    rec, i_a, i_b, x = _run_kernel(
        disc.lower, disc.diag, disc.upper, disc.m_lower, disc.m_diag, disc.m_upper,
        disc.row_a, disc.row_b, *disc.weights, disc.g_a, disc.g_b,
        u_a, u_b, initial.to_vector(cable), rec_idx,
    )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(rec))):
        raise SolverDivergenceError("non-finite state during simulate_period")
    trace = Trace(taps, rec, i_a, i_b, dt, t_start)
    return trace, CircuitState.from_vector(x, cable)


def charging_rate_demo(R, C, B, T_eff, window, dt=None, k=BOLTZMANN):
    """Mean ``|dU/dt|`` while ``C`` charges through ``R`` from 0 V.

    The drive is the noise-RMS-scale DC level ``sqrt(4 k T_eff R B)``, so the
    early slope is ``U_inf / (R C)`` and falls off as ``1/sqrt(R)``.
    """
    R = check_positive(R, "R")
    C = check_positive(C, "C")
    B = check_positive(B, "B")
    window = check_positive(window, "window")
    if window > 0.1 * R * C * (1 + 1e-12):
        raise ValueError(f"window {window} exceeds 0.1*R*C = {0.1 * R * C}")
    level = math.sqrt(4 * k * check_nonnegative(T_eff, "T_eff") * R * B)
    cable = CableModel.ideal(capacitance=C)
    # Bob's side is left open with a very large resistor.
    config = LoopConfig(R_A=R, R_B=1e30, source_A=level, source_B=0.0, cable=cable)
    if dt is None:
        dt = window / 1000
    trace, final = simulate_period(config, window, dt, taps=(0,))
    v = np.append(trace.voltages[0], final.node_voltages[0])
    return float(np.mean(np.abs(np.diff(v))) / dt)
