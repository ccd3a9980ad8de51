"""Eve's side: the transient attack and the DC continuity experiment.

The transient attack reads the voltage at one cable node during a short
window right after switching, when the wave launched by the near-end
resistor dominates, and thresholds a scalar statistic of it.  The
classifier follows the scikit-learn estimator protocol (a decision stump
on the log statistic), so it can be fitted on labelled simulations and
reused across runs.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_count, check_nonnegative, check_positive, check_probability
from .protocol import BIT_VALUE, H, L, RrrtParams, iter_periods
from .signal import correlation_time

STATISTICS = ("mean_square", "mean_abs_du")
CALIBRATION_STREAM = 0xCA1  # seed suffix keeping training draws apart from test draws


class CalibrationWarning(UserWarning):
    """Training data barely separates the two classes."""


class SingularMeasurementError(ValueError):
    """The requested inversion has no unique solution."""


class InsufficientDataError(ValueError):
    """Too few secure bits for a meaningful estimate."""


def early_statistic(trace, tap_node, window, statistic="mean_square"):
    """Scalar summary of the voltage at ``tap_node`` over the first ``window`` seconds.

    ``mean_square`` is the mean square of the excursion from the voltage
    held at the switching instant; ``mean_abs_du`` is the mean absolute
    slope.  Both are read from ``trace.early`` when present.
    """
    src = trace.early if trace.early is not None else trace
    v = src.tap(tap_node).samples
    m = int(round(window / src.dt))
    if m < 2 or m > v.size:
        raise ValueError(
            f"window of {window} s needs {m} samples; the early record has {v.size}"
        )
    v = v[:m]
    if statistic == "mean_square":
        return float(np.mean((v - v[0]) ** 2))
    if statistic == "mean_abs_du":
        return float(np.mean(np.abs(np.diff(v))) / src.dt)
    raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")


class TransientAttack(ClassifierMixin, BaseEstimator):
    """Threshold classifier for the near-end resistor.

    Parameters
    ----------
    tap_node : int
        Cable node Eve watches.
    window_fraction : float
        Window length as a fraction of the noise correlation time.
    statistic : {"mean_square", "mean_abs_du"}
    bandwidth : float
        Noise bandwidth, used to turn ``window_fraction`` into seconds.
    min_accuracy : float
        Training accuracy below which a :class:`CalibrationWarning` is raised.

    Attributes
    ----------
    threshold_ : float
        Cut on the log statistic.
    high_below_ : bool
        True if values below the cut are classified H (slower charging).
    separation_ : float
        Difference of class means of the log statistic in pooled standard deviations.
    training_accuracy_ : float
    quality_warning_ : bool
    """

    def __init__(self, tap_node=1, window_fraction=0.1, statistic="mean_square",
                 bandwidth=1e3, min_accuracy=0.55):
        self.tap_node = tap_node
        self.window_fraction = window_fraction
        self.statistic = statistic
        self.bandwidth = bandwidth
        self.min_accuracy = min_accuracy

    @property
    def window(self):
        check_probability(self.window_fraction, "window_fraction", lo=1e-12, hi=1.0)
        return self.window_fraction * correlation_time(self.bandwidth)

    def features(self, traces):
        """Log statistic for each trace, shaped ``(n, 1)``."""
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; choose from {STATISTICS}")
        w = self.window
        vals = [early_statistic(t, self.tap_node, w, self.statistic) for t in traces]
        return np.log(np.maximum(np.asarray(vals, dtype=float), np.finfo(float).tiny))[:, None]

    def fit(self, X, y):
        """Pick the cut and polarity minimising training error (ties favour L)."""
        X, y = check_X_y(X, y)
        if X.shape[1] != 1:
            raise ValueError("TransientAttack expects a single feature column")
        x = X[:, 0]
        y = np.asarray(y, dtype=int)
        self.classes_ = np.array([0, 1])
        if len(np.unique(y)) < 2:
            raise ValueError("training data must contain both classes")
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        n = xs.size
        n_high = ys.sum()
        # Cut after position j: H-below accuracy = (#H in [0, j) + #L in [j, n)) / n.
        high_before = np.concatenate([[0], np.cumsum(ys)])
        low_after = (n - n_high) - np.concatenate([[0], np.cumsum(1 - ys)])
        acc_below = (high_before + low_after) / n
        # Only cut between distinct values.
        valid = np.ones(n + 1, dtype=bool)
        valid[1:n] = xs[1:] > xs[:-1]
        acc_below = np.where(valid, acc_below, -1.0)
        acc_above = np.where(valid, 1.0 - acc_below, -1.0)
        j_below, j_above = int(np.argmax(acc_below)), int(np.argmax(acc_above))
        if acc_below[j_below] >= acc_above[j_above]:
            self.high_below_, j, acc = True, j_below, acc_below[j_below]
        else:
            self.high_below_, j, acc = False, j_above, acc_above[j_above]
        if j == 0:
            self.threshold_ = xs[0] - 1.0
        elif j == n:
            self.threshold_ = xs[-1] + 1.0
        else:
            self.threshold_ = 0.5 * (xs[j - 1] + xs[j])
        self.training_accuracy_ = float(acc)
        a, b = x[y == 0], x[y == 1]
        pooled = math.sqrt(0.5 * (a.var(ddof=1) + b.var(ddof=1))) if min(a.size, b.size) > 1 else 0.0
        self.separation_ = float((a.mean() - b.mean()) / pooled) if pooled > 0 else math.inf
        self.quality_warning_ = self.training_accuracy_ < self.min_accuracy
        if self.quality_warning_:
            warnings.warn(
                f"transient statistic separates poorly (training accuracy "
                f"{self.training_accuracy_:.3f}, separation {self.separation_:.2f} SD)",
                CalibrationWarning,
                stacklevel=2,
            )
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        X = check_array(X)
        x = X[:, 0]
        # A value exactly on the cut goes to L.
        if self.high_below_:
            return (x < self.threshold_).astype(int)
        return (x > self.threshold_).astype(int)

    def guess(self, trace):
        """Near-end resistor guess, ``"L"`` or ``"H"``."""
        return H if self.predict(self.features([trace]))[0] == 1 else L


EveConfig = TransientAttack


def _seed_tuple(rng_seed):
    return tuple(int(s) for s in rng_seed) if isinstance(rng_seed, (tuple, list)) else (int(rng_seed),)


def _labelled(params, n_periods, rng_seed):
    traces, labels = [], []
    for trace, outcome in iter_periods(params, n_periods, rng_seed, burn_in=1):
        if outcome.kept:
            traces.append(trace)
            labels.append(BIT_VALUE[outcome.alice_bit])
    return traces, np.asarray(labels, dtype=int)


def _check_fine_window(params, eve):
    eve.window  # validates window_fraction
    if params.fine_window + 1e-15 < eve.window:
        raise ValueError(
            f"protocol fine_window {params.fine_window} is shorter than Eve's window {eve.window}"
        )
    if eve.tap_node not in params.cable.tap_nodes:
        raise ValueError(f"tap_node {eve.tap_node} is not a recorded cable node")


def calibrate_transient_classifier(params, eve, n_training, rng_seed):
    """Fit ``eve`` on simulated secure periods labelled by Alice's resistor.

    ``n_training`` is the minimum number of secure periods per class; the
    simulated chain is extended until both classes reach it.
    """
    check_count(n_training, "n_training", minimum=100)
    _check_fine_window(params, eve)
    traces, labels = [], np.zeros(0, dtype=int)
    chunk = 0
    while min(np.sum(labels == 0), np.sum(labels == 1)) < n_training:
        need = max(n_training - min(np.sum(labels == 0), np.sum(labels == 1)), 50)
        t, y = _labelled(params, 3 * need, (*_seed_tuple(rng_seed), chunk))
        traces += t
        labels = np.concatenate([labels, y])
        chunk += 1
    return eve.fit(eve.features(traces), labels)


def transient_attack_guess(trace, eve, spec=None):
    """Eve's guess of the near-end resistor; ``spec`` supplies the bandwidth if given."""
    if spec is not None and spec.bandwidth != eve.bandwidth:
        eve = copy.copy(eve).set_params(bandwidth=spec.bandwidth)
    return eve.guess(trace)


@dataclass(frozen=True)
class AttackStats:
    n_secure_bits: int
    n_correct: int
    ci95: tuple

    @property
    def p(self):
        return self.n_correct / self.n_secure_bits

    @classmethod
    def from_counts(cls, n_correct, n_secure_bits):
        from .harness.stats import wilson_interval

        return cls(int(n_secure_bits), int(n_correct), wilson_interval(n_correct, n_secure_bits))


def attack_chain(params, eve, n_periods, rng_seed):
    """``(n_correct, n_secure)`` for one chain of periods (first period is burn-in)."""
    _check_fine_window(params, eve)
    check_is_fitted(eve, "threshold_")
    correct = secure = 0
    for trace, outcome in iter_periods(params, n_periods, rng_seed, burn_in=1):
        if not outcome.kept:
            continue
        secure += 1
        correct += eve.guess(trace) == outcome.alice_bit
    return correct, secure


def estimate_eve_success(protocol_kind, params, eve, n_periods, rng_seed, min_secure=500):
    """Eve's success rate over kept bits, with a Wilson 95% interval.

    ``protocol_kind`` must match ``params`` (``"kljn"`` or ``"rrrt"``).  An
    unfitted ``eve`` is calibrated first on an independent seed stream.
    """
    kind_ok = isinstance(params, RrrtParams) == (protocol_kind == "rrrt")
    if protocol_kind not in ("kljn", "rrrt") or not kind_ok:
        raise ValueError(f"protocol_kind {protocol_kind!r} does not match {type(params).__name__}")
    if not hasattr(eve, "threshold_"):
        calibrate_transient_classifier(params, eve, 200, (*_seed_tuple(rng_seed), CALIBRATION_STREAM))
    correct, secure = attack_chain(params, eve, n_periods, rng_seed)
    if secure < min_secure:
        raise InsufficientDataError(f"only {secure} secure bits; need at least {min_secure}")
    return AttackStats.from_counts(correct, secure)


# --- DC continuity experiment ---------------------------------------------


@dataclass(frozen=True)
class DcScenario:
    """DC loop: Alice (U_A, 1 ohm), Eve's series R_E, Bob (U_B, 1 ohm).

    Noise voltages are the Johnson noise of each resistor averaged over
    ``tau``: variance ``4 k T R * min(B, 1/(2 tau))``.
    """

    U0: float = 1.0
    R_E: float = 1.0
    T: float = 1.0
    include_noise: bool = False
    tau: float = 1.0
    bandwidth: float = 1e3
    mode: str = "voltage_only"
    R_A: float = 1.0
    R_B: float = 1.0
    k: float = 0.25

    def __post_init__(self):
        check_positive(self.U0, "U0")
        check_nonnegative(self.R_E, "R_E")
        check_nonnegative(self.T, "T")
        check_positive(self.tau, "tau")
        check_positive(self.bandwidth, "bandwidth")
        if self.mode not in ("voltage_only", "voltage_and_current"):
            raise ValueError(f"mode must be 'voltage_only' or 'voltage_and_current', got {self.mode!r}")

    def noise_std(self, R):
        return math.sqrt(4 * self.k * self.T * R * min(self.bandwidth, 1 / (2 * self.tau)))


@dataclass(frozen=True)
class DcObservation:
    U_AE: np.ndarray
    U_BE: np.ndarray
    I: np.ndarray


def dc_observe(scenario, U_A, U_B, rng=None):
    """What Eve's meters read for the given secret voltages (vectorised).

    ``I`` is positive when flowing from Bob's side toward Alice's;
    ``U_AE``/``U_BE`` are the voltages at Alice's and Bob's ends of ``R_E``.
    """
    U_A = np.asarray(U_A, dtype=float)
    U_B = np.asarray(U_B, dtype=float)
    s = scenario
    if s.include_noise:
        if rng is None:
            raise ValueError("noisy scenarios need an rng")
        n_a = rng.standard_normal(U_A.shape) * s.noise_std(s.R_A)
        n_b = rng.standard_normal(U_A.shape) * s.noise_std(s.R_B)
        n_e = rng.standard_normal(U_A.shape) * s.noise_std(s.R_E)
    else:
        n_a = n_b = n_e = 0.0
    ua, ub = U_A + n_a, U_B + n_b
    current = (ub - ua + n_e) / (s.R_A + s.R_B + s.R_E)
    return DcObservation(ua + current * s.R_A, ub - current * s.R_B, current)


def dc_eve_voltage_only(U_AE, U_BE, R_E, R_A=1.0, R_B=1.0):
    """Reconstruct ``(U_A, U_B)`` from the two voltages around ``R_E``.

    The current is inferred from the drop across ``R_E``; with ``R_E = 0``
    the two readings coincide and the system has no unique solution.
    """
    R_E = check_nonnegative(R_E, "R_E")
    if R_E == 0:
        raise SingularMeasurementError("voltage-only inversion is singular at R_E = 0")
    current = (np.asarray(U_BE) - np.asarray(U_AE)) / R_E
    return U_AE - current * R_A, U_BE + current * R_B


def dc_eve_full(U_E, I, U_BE=None, R_A=1.0, R_B=1.0):
    """``(U_E - I R_A, U_E + I R_B)``; ``U_BE`` replaces ``U_E`` on Bob's side when ``R_E > 0``."""
    U_B_side = U_E if U_BE is None else U_BE
    return U_E - I * R_A, U_B_side + I * R_B


def continuity_trial(scenario, n_trials, rng_seed):
    """Eve's success on Alice's bit and the spread of her estimate of ``U_A``.

    Returns ``(n_correct, est_std)``; ``est_std`` is the standard deviation
    of ``U_A_est - U_A``.
    """
    n_trials = check_count(n_trials, "n_trials", minimum=1)
    rng = np.random.default_rng(rng_seed)
    U_A = np.where(rng.integers(0, 2, n_trials) == 1, scenario.U0, -scenario.U0)
    U_B = np.where(rng.integers(0, 2, n_trials) == 1, scenario.U0, -scenario.U0)
    obs = dc_observe(scenario, U_A, U_B, rng)
    if scenario.mode == "voltage_only":
        ua_est, _ = dc_eve_voltage_only(obs.U_AE, obs.U_BE, scenario.R_E, scenario.R_A, scenario.R_B)
    else:
        ua_est, _ = dc_eve_full(obs.U_AE, obs.I, obs.U_BE, scenario.R_A, scenario.R_B)
    # A zero estimate is guessed as +U0.
    correct = int(np.sum(np.where(ua_est >= 0, 1.0, -1.0) == np.sign(U_A)))
    err = ua_est - U_A
    return correct, float(np.std(err)) if n_trials > 1 else 0.0


def default_continuity_grid(lo_decade=-4, hi_decade=1, per_decade=5, include_zero=True):
    n = (hi_decade - lo_decade) * per_decade + 1
    grid = list(np.logspace(lo_decade, hi_decade, n))
    return ([0.0] if include_zero else []) + grid


def run_continuity_experiment(base, grid, n_trials, rng_seed, modes=None, noise=(False, True)):
    """Sweep ``R_E`` over ``grid`` for every mode and noise setting.

    Each cell is seeded from ``(rng_seed, cell index)``.  Voltage-only cells
    at ``R_E = 0`` are reported with ``singular=1`` and no estimate.

    Returns
    -------
    list of dict
        Keys ``R_E, mode, noise, n, p, ci_lo, ci_hi, est_std, singular``.
    """
    from .harness.stats import wilson_interval

    if not len(grid):
        raise ValueError("empty R_E grid")
    if any(r < 0 for r in grid):
        raise ValueError("R_E grid values must be >= 0")
    modes = modes or ("voltage_only", "voltage_and_current")
    rows = []
    cell = 0
    for mode in modes:
        for with_noise in noise:
            for R_E in grid:
                s = DcScenario(**{**base.__dict__, "R_E": R_E, "mode": mode, "include_noise": with_noise})
                seed = np.random.SeedSequence([int(rng_seed), cell])
                cell += 1
                row = {"R_E": float(R_E), "mode": mode, "noise": int(with_noise), "n": n_trials}
                try:
                    correct, spread = continuity_trial(s, n_trials, seed)
                except SingularMeasurementError:
                    row.update(p=math.nan, ci_lo=math.nan, ci_hi=math.nan, est_std=math.nan, singular=1)
                else:
                    lo, hi = wilson_interval(correct, n_trials)
                    row.update(p=correct / n_trials, ci_lo=lo, ci_hi=hi, est_std=spread, singular=0)
                rows.append(row)
    return rows
