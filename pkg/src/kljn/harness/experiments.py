"""The named experiments behind ``kljn run``.

Randomness is always derived from ``(master_seed, counter)`` pairs: chain
``c`` of a Monte Carlo run uses ``(master_seed, c)`` and the chain layout
comes from the config, never from the worker count, so output files are
byte-identical whatever ``workers`` is.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..attack import (
    CALIBRATION_STREAM,
    DcScenario,
    TransientAttack,
    calibrate_transient_classifier,
    default_continuity_grid,
    early_statistic,
    run_continuity_experiment,
)
from ..circuit import CableModel, charging_rate_demo
from ..privacy import KeyMaterial, amplify, leak_metrics
from ..protocol import BIT_VALUE, KljnParams, RrrtParams, iter_periods
from ..signal import NoiseSpec, estimate_psd, generate_band_limited_gaussian
from .stats import wilson_interval

DEFAULT_TRIALS = {
    "kljn-exchange": 400,
    "attack-transient": 4400,
    "defend-rrrt": 2600,
    "amplify": 1 << 20,
    "continuity": 1000,
    "psd-check": 1 << 20,
    "scaling-demo": 1,
}


@dataclass
class Report:
    experiment: str
    summary: dict
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    texts: dict = field(default_factory=dict)  # file name -> str

    def csv_text(self, name):
        header, rows = self.tables[name]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary_text(self):
        lines = [f"experiment: {self.experiment}"]
        lines += [f"{k}: {_fmt(v)}" for k, v in self.summary.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name in self.tables:
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(self.csv_text(name))
            paths.append(path)
        for name, text in self.texts.items():
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
            paths.append(path)
        path = os.path.join(out_dir, "summary.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.summary_text())
        paths.append(path)
        return paths


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(str(_fmt(x)) for x in v) + "]"
    return v


# --- builders (also used for validation) ---------------------------------------


def build_cable(config):
    c = config.cable
    taps = tuple(c.tap_nodes) or None
    if c.model == "ideal":
        return CableModel.ideal(c.shunt_capacitance)
    if c.model == "line":
        cable = CableModel.from_line(c.n_segments, c.delay, c.impedance, c.total_resistance, None)
        if taps is None:
            taps = (0, 1, c.n_segments)
        return CableModel(cable.n_segments, cable.series_resistance, cable.series_inductance,
                          cable.shunt_capacitance, taps)
    if c.model == "ladder":
        return CableModel(c.n_segments, c.series_resistance, c.series_inductance,
                          c.shunt_capacitance, taps or (0, 1, c.n_segments))
    raise ValueError(f"cable.model must be 'line', 'ladder' or 'ideal', got {c.model!r}")


def _timing(config):
    p = config.protocol
    return dict(
        bandwidth=p.bandwidth,
        bit_period=p.bit_period,
        switching_mode=p.switching_mode,
        ramp_time=p.ramp_time or None,
        cable=build_cable(config),
        fine_window=p.fine_window,
        k=config.physics.k_eff,
    )


def build_kljn_params(config):
    p = config.protocol
    return KljnParams(R_L=p.R_L, R_H=p.R_H, T_eff=p.T_eff, **_timing(config))


def build_rrrt_params(config):
    r = config.rrrt
    return RrrtParams(R_min=r.R_min, R_max=r.R_max, T_min=r.T_min, T_max=r.T_max,
                      resolution_threshold=r.resolution_threshold, **_timing(config))


def build_attack(config):
    a = config.attack
    if a.n_training < 100:
        raise ValueError("attack.n_training must be >= 100")
    eve = TransientAttack(tap_node=a.tap_node, window_fraction=a.window_fraction,
                          statistic=a.statistic, bandwidth=config.protocol.bandwidth)
    eve.window  # window_fraction range check
    if a.statistic not in ("mean_square", "mean_abs_du"):
        raise ValueError(f"attack.statistic must be 'mean_square' or 'mean_abs_du', got {a.statistic!r}")
    if config.experiment in ("attack-transient", "defend-rrrt"):
        cable = build_cable(config)
        if a.tap_node not in cable.tap_nodes:
            raise ValueError(f"attack.tap_node {a.tap_node} is not among cable.tap_nodes {cable.tap_nodes}")
        if config.protocol.fine_window + 1e-15 < eve.window:
            raise ValueError("protocol.fine_window must cover Eve's window (window_fraction / (2B))")
    return eve


def build_dc_scenario(config):
    c = config.continuity
    return DcScenario(U0=c.U0, T=c.T, tau=c.tau, bandwidth=c.bandwidth, k=config.physics.k_eff)


def build_continuity_grid(config):
    c = config.continuity
    if c.hi_decade <= c.lo_decade or c.per_decade < 1:
        raise ValueError("continuity grid needs hi_decade > lo_decade and per_decade >= 1")
    if c.n_trials < 500:
        raise ValueError("continuity.n_trials must be >= 500")
    return default_continuity_grid(c.lo_decade, c.hi_decade, c.per_decade)


def check_sections(config):
    pr = config.privacy
    if not 0.5 <= pr.p0 <= 1:
        raise ValueError("privacy.p0 must lie in [0.5, 1]")
    if pr.stages < 0 or pr.n_bits < (1 << pr.stages):
        raise ValueError("privacy.n_bits must be >= 2**stages")
    ps = config.psd
    NoiseSpec(ps.spectral_density, ps.bandwidth)
    if ps.dt > 1 / (2 * ps.bandwidth):
        raise ValueError("psd.dt violates Nyquist (dt <= 1/(2B))")
    if ps.segment_len & (ps.segment_len - 1) or ps.segment_len > ps.n_samples:
        raise ValueError("psd.segment_len must be a power of two no larger than psd.n_samples")
    sc = config.scaling
    if len(sc.resistances) < 2 or any(r <= 0 for r in sc.resistances):
        raise ValueError("scaling.resistances needs at least two positive values")
    if not 0 < sc.window_fraction <= 0.1:
        raise ValueError("scaling.window_fraction must lie in (0, 0.1]")


# --- helpers ------------------------------------------------------------------


def _trials(config):
    return config.n_trials or DEFAULT_TRIALS[config.experiment]


def _chain_sizes(total, n_chains):
    n_chains = min(n_chains, total)
    return [total // n_chains + (c < total % n_chains) for c in range(n_chains)]


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _exchange_chain(params, n_periods, seed):
    return [o for _, o in iter_periods(params, n_periods, seed)]


def _attack_chain(params, eve, n_periods, seed):
    rows = []
    for j, (trace, o) in enumerate(iter_periods(params, n_periods, seed, burn_in=1)):
        if not o.kept:
            continue
        stat = early_statistic(trace, eve.tap_node, eve.window, eve.statistic)
        guess = eve.guess(trace)
        rows.append((j, o, stat, guess))
    return rows


# --- experiments --------------------------------------------------------------


def _kljn_exchange(config):
    params = build_kljn_params(config)
    sizes = _chain_sizes(_trials(config), config.n_chains)
    jobs = [(params, n, (config.master_seed, c)) for c, n in enumerate(sizes)]
    chains = _map(_exchange_chain, jobs, config.workers)
    rows, key = [], []
    n_kept = n_err = 0
    for c, outcomes in enumerate(chains):
        for j, o in enumerate(outcomes):
            rows.append((c, j, o.pair_class, o.kept, o.alice_decision, o.bob_decision, o.error))
            if o.kept:
                n_kept += 1
                n_err += o.error
                key.append(str(BIT_VALUE[o.alice_bit]))
    n = sum(sizes)
    lo, hi = wilson_interval(n_err, n_kept) if n_kept else (math.nan, math.nan)
    klo, khi = wilson_interval(n_kept, n)
    summary = {
        "n_periods": n,
        "n_kept": n_kept,
        "kept_fraction": n_kept / n,
        "kept_ci95": (klo, khi),
        "q": n_err / n_kept if n_kept else math.nan,
        "q_ci95": (lo, hi),
    }
    header = ["chain", "period", "class", "kept", "alice_decision", "bob_decision", "error"]
    return Report(config.experiment, summary, {"exchange.csv": (header, rows)}, {"key.txt": "".join(key)})


def _attack(config, rrrt):
    params = build_rrrt_params(config) if rrrt else build_kljn_params(config)
    eve = build_attack(config)
    calibrate_transient_classifier(params, eve, config.attack.n_training,
                                   (config.master_seed, CALIBRATION_STREAM))
    sizes = _chain_sizes(_trials(config), config.n_chains)
    jobs = [(params, eve, n, (config.master_seed, c)) for c, n in enumerate(sizes)]
    chains = _map(_attack_chain, jobs, config.workers)
    rows = []
    correct = 0
    for c, chain in enumerate(chains):
        for j, o, stat, guess in chain:
            ok = guess == o.alice_bit
            correct += ok
            base = (c, j, o.pair_class, stat, guess, ok)
            rows.append(base + ((o.R_A, o.R_B, o.T_A, o.T_B) if rrrt else ()))
    n = len(rows)
    if n == 0:
        raise RuntimeError("no secure bits were produced")
    lo, hi = wilson_interval(correct, n)
    summary = {
        "protocol": "rrrt" if rrrt else "kljn",
        "switching_mode": config.protocol.switching_mode,
        "n_secure_bits": n,
        "n_correct": correct,
        "p": correct / n,
        "p_ci95": (lo, hi),
        "ci_excludes_half": not lo <= 0.5 <= hi,
        "training_accuracy": eve.training_accuracy_,
        "training_separation_sd": eve.separation_,
    }
    header = ["chain", "period", "class", "statistic", "guess", "correct"]
    if rrrt:
        header += ["R_A", "R_B", "T_A", "T_B"]
    return Report(config.experiment, summary, {"attack.csv": (header, rows)})


def _amplify(config):
    pr = config.privacy
    n_bits = config.n_trials or pr.n_bits
    material = KeyMaterial.simulate(n_bits, pr.p0, np.random.SeedSequence([config.master_seed, 0]))
    rows = []
    current = material
    for s in range(pr.stages + 1):
        if s:
            current, _ = amplify(current, 1)
        m = len(current)
        k = int(np.sum(current.bits == current.eve_guess))
        lo, hi = wilson_interval(k, m)
        eps, info = leak_metrics(current.eve_p)
        rows.append((s, m, current.eve_p, k / m, lo, hi, eps, info))
    _, report = amplify(material, pr.stages)
    summary = dict(report.as_rows())
    summary["p_out_empirical_ci95"] = (rows[-1][4], rows[-1][5])
    header = ["stage", "length", "p_predicted", "p_empirical", "ci_lo", "ci_hi", "epsilon", "mi_leak"]
    return Report(config.experiment, summary, {"amplify.csv": (header, rows)})


def _continuity(config):
    grid = build_continuity_grid(config)
    n = config.n_trials or config.continuity.n_trials
    rows = run_continuity_experiment(build_dc_scenario(config), grid, n, config.master_seed)
    header = ["R_E", "mode", "noise", "n", "p", "ci_lo", "ci_hi", "est_std"]
    table = [tuple(r[h] for h in header) for r in rows]
    summary = {}
    for mode in ("voltage_only", "voltage_and_current"):
        for noise in (0, 1):
            cell = [r for r in rows if r["mode"] == mode and r["noise"] == noise and not r["singular"]]
            ps = np.array([r["p"] for r in cell])
            summary[f"{mode}_noise{noise}_p_range"] = (float(ps.min()), float(ps.max()))
            jumps = []
            for a, b in zip(cell, cell[1:]):
                if a["R_E"] == 0 or b["R_E"] == 0:
                    continue
                se = math.sqrt(a["p"] * (1 - a["p"]) / a["n"] + b["p"] * (1 - b["p"]) / b["n"])
                jumps.append(abs(a["p"] - b["p"]) / se if se > 0 else 0.0)
            summary[f"{mode}_noise{noise}_max_jump_sigma"] = max(jumps) if jumps else 0.0
    summary["voltage_only_singular_at_zero"] = any(
        r["singular"] for r in rows if r["R_E"] == 0 and r["mode"] == "voltage_only"
    )
    return Report(config.experiment, summary, {"continuity.csv": (header, table)})


def _psd_check(config):
    ps = config.psd
    n = config.n_trials or ps.n_samples
    spec = NoiseSpec(ps.spectral_density, ps.bandwidth)
    sig = generate_band_limited_gaussian(spec, n, ps.dt, np.random.SeedSequence([config.master_seed, 0]))
    freqs, dens = estimate_psd(sig, ps.segment_len)
    df = freqs[1]
    band = (freqs >= 2 * df) & (freqs <= ps.bandwidth - 2 * df)
    out = freqs > ps.bandwidth + 2 * df
    summary = {
        "n_samples": n,
        "variance_ratio": float(np.var(sig.samples)) / spec.variance,
        "in_band_density_ratio": float(np.mean(dens[band])) / ps.spectral_density,
        "out_of_band_density_ratio": float(np.mean(dens[out])) / ps.spectral_density if np.any(out) else 0.0,
    }
    rows = list(zip(freqs, dens))
    return Report(config.experiment, summary, {"psd.csv": (["frequency", "density"], rows)})


def _scaling(config):
    sc = config.scaling
    window = sc.window_fraction * min(sc.resistances) * sc.capacitance
    rows = []
    for R in sc.resistances:
        slope = charging_rate_demo(R, sc.capacitance, sc.bandwidth, sc.T_eff, window, k=config.physics.k_eff)
        rows.append((R, sc.capacitance, window, slope))
    r0, s0 = rows[0][0], rows[0][3]
    summary = {}
    for R, _, _, s in rows[1:]:
        summary[f"slope_ratio_{_fmt(r0)}_over_{_fmt(R)}"] = s0 / s
        summary[f"sqrt_ratio_{_fmt(R)}_over_{_fmt(r0)}"] = math.sqrt(R / r0)
    header = ["R", "C", "window", "mean_abs_slope"]
    return Report(config.experiment, summary, {"scaling.csv": (header, rows)})


RUNNERS = {
    "kljn-exchange": _kljn_exchange,
    "attack-transient": lambda c: _attack(c, rrrt=False),
    "defend-rrrt": lambda c: _attack(c, rrrt=True),
    "amplify": _amplify,
    "continuity": _continuity,
    "psd-check": _psd_check,
    "scaling-demo": _scaling,
}


def run_experiment(config, out_dir=None):
    """Run ``config.experiment``; write CSV and summary files when ``out_dir`` is given."""
    report = RUNNERS[config.experiment](config)
    out_dir = out_dir or config.output or None
    if out_dir:
        report.write(out_dir)
    return report
