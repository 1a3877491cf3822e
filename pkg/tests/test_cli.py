import numpy as np
import pytest

from illiquid.cli import _crossings, load_config, main

DISC = """
[model]
kind = "discrete"
points = [-0.95, 1.0]
probs = [0.5, 0.5]

[params]
rho = 0.2
lambda = 2.0

[utility]
K1 = 1.0
gamma = 0.5

[solver]
n_xi = 128

[bvp]
x0 = 1.9
a = 1.0

[sim]
seed = 7
n_paths = 200
T_sim = 35.0
"""


@pytest.fixture()
def disc_cfg(tmp_path):
    p = tmp_path / "disc.toml"
    p.write_text(DISC)
    return p


def test_load_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[params]\nrho = 0.2\nlambad = 2.0\n")
    from illiquid.cli import ConfigError
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_missing_config_is_usage_error(tmp_path, capsys):
    rc = main(["solve", "--config", str(tmp_path / "nope.toml")])
    assert rc == 1
    assert "config error" in capsys.readouterr().err


def test_validate_exit_codes(tmp_path, disc_cfg):
    assert main(["validate", "--config", str(disc_cfg)]) == 0
    border = tmp_path / "border.toml"
    border.write_text('[model]\nkind = "black_scholes"\nb = 0.4\nsigma = 1.0\n')
    assert main(["validate", "--config", str(border)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text('[model]\nkind = "black_scholes"\nb = 0.5\nsigma = 1.0\n')
    assert main(["validate", "--config", str(bad)]) == 3


def test_failed_assumptions_gate_solve(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[model]\nkind = "black_scholes"\nb = 0.5\nsigma = 1.0\n')
    assert main(["solve", "--config", str(bad),
                 "--out", str(tmp_path)]) == 3


def test_solve_writes_value_and_policy(tmp_path, disc_cfg, capsys):
    rc = main(["solve", "--config", str(disc_cfg), "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "theta1" in out
    value = tmp_path / "value.csv"
    assert value.exists() and (tmp_path / "policy.txt").exists()
    header = value.read_text().splitlines()[0]
    assert "config_hash=" in header and "theta1=" in header


def test_path_command(tmp_path, disc_cfg, capsys):
    rc = main(["path", "--config", str(disc_cfg), "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "baseline_crossings=1" in out
    data = np.loadtxt(tmp_path / "path.csv", delimiter=",", skiprows=2)
    y, y_base = data[:, 1], data[:, 4]
    assert np.all(y >= y_base - 1e-8)


def test_simulate_command(tmp_path, disc_cfg, capsys):
    rc = main(["simulate", "--config", str(disc_cfg), "--out", str(tmp_path)])
    assert rc == 0
    body = (tmp_path / "sim.csv").read_text().splitlines()
    assert body[1].startswith("n_paths")
    assert body[2].startswith("200,")


def test_crossings_counter():
    s = np.linspace(0.0, 1.0, 200)
    assert _crossings(np.exp(-s), np.full_like(s, 0.5)) == 1
    assert _crossings(np.exp(-s), np.exp(-s) + 1.0) == 0
