import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kljn.harness import config as cfg
from kljn.harness.cli import default_config_text, main
from kljn.harness.config import ConfigError, parse_config, serialize_config
from kljn.harness.experiments import run_experiment
from kljn.harness.stats import wilson_interval


def test_minimal_config_takes_defaults():
    c = parse_config('experiment = "amplify"\n')
    assert c.master_seed == 0 and c.n_chains == 8 and c.workers == 1
    assert c.privacy.p0 == 0.75 and c.physics.k_eff == 0.25


@pytest.mark.parametrize(
    "text,match",
    [
        ('experiment = "amplify"\n[protocol]\nR_L = 1e4\nR_H = 1e3\n', "R_L < R_H"),
        ('experiment = "amplify"\n[protocol]\nbogus = 1\n', "unknown key"),
        ('experiment = "amplify"\nextra = 1\n', "unknown top-level"),
        ('experiment = "nope"\n', "unknown experiment"),
        ("master_seed = 1\n", "missing required"),
        ('experiment = "amplify"\nmaster_seed = "x"\n', "integer"),
        ('experiment = "amplify"\nworkers = 0\n', "workers"),
        ('experiment = "amplify"\n[privacy]\np0 = 0.3\n', "p0"),
        ('experiment = "amplify"\n[psd]\ndt = 1.0\n', "Nyquist"),
        ('experiment = "amplify"\n[continuity]\nn_trials = 10\n', "n_trials"),
        ('experiment = "attack-transient"\n[attack]\ntap_node = 7\n', "tap_node"),
        ('experiment = "amplify"\n[protocol]\nswitching_mode = "symmetric_ramp"\n', "ramp"),
        ("experiment = [", "TOML syntax"),
    ],
)
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@pytest.mark.parametrize("name", cfg.EXPERIMENTS)
def test_shipped_configs_round_trip(name):
    c = parse_config(default_config_text(name))
    assert c.experiment == name
    assert parse_config(serialize_config(c)) == c


def test_wilson_closed_form():
    k, n, z = 37, 120, 1.959963984540054
    ph = k / n
    centre = (ph + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(centre - half, rel=1e-9)
    assert hi == pytest.approx(centre + half, rel=1e-9)
    assert wilson_interval(0, 100)[0] == 0.0
    assert wilson_interval(0, 100)[1] == pytest.approx(0.036993, abs=1e-6)


@given(n=st.integers(1, 10_000), data=st.data())
def test_wilson_symmetry_and_bounds(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    lo2, hi2 = wilson_interval(n - k, n)
    assert 0 <= lo <= k / n <= hi <= 1
    assert lo == pytest.approx(1 - hi2, abs=1e-12)
    assert hi == pytest.approx(1 - lo2, abs=1e-12)


# --- CLI ---------------------------------------------------------------------------


def test_cli_success(tmp_path, capsys):
    assert main(["amplify", "--trials", "4096", "--out", str(tmp_path)]) == 0
    assert "p_out" in capsys.readouterr().out
    assert (tmp_path / "amplify.csv").read_text().startswith("stage,length,")
    assert (tmp_path / "summary.txt").exists()


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('experiment = "amplify"\n[privacy]\nstages = "four"\n')
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.toml")]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_runtime_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["amplify", "--trials", "64", "--out", str(blocker)]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_cli_show_config(capsys):
    assert main(["show-config", "continuity"]) == 0
    assert 'experiment = "continuity"' in capsys.readouterr().out


def test_run_uses_config_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('experiment = "scaling-demo"\n')
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "scaling.csv").exists()


@pytest.mark.slow
def test_csv_identical_across_worker_counts():
    base = parse_config(default_config_text("kljn-exchange")).replace(
        n_trials=24, n_chains=4, protocol=cfg.ProtocolSection(bit_period=0.1, fine_window=0.0)
    )
    a = run_experiment(base.replace(workers=1)).csv_text("exchange.csv")
    b = run_experiment(base.replace(workers=3)).csv_text("exchange.csv")
    assert a == b


def test_chain_layout_depends_only_on_config():
    from kljn.harness.experiments import _chain_sizes

    assert _chain_sizes(10, 4) == [3, 3, 2, 2]
    assert _chain_sizes(3, 8) == [1, 1, 1]
