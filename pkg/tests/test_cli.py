import json

import numpy as np
import pytest

from dppmix import cli, io
from dppmix.analysis import Trace
from dppmix.config import DataError, load_data, parse_config
from dppmix.model import ConfigError, CovMixtureState, MixtureState

NOCOV = """
[data]
path = builtin:eight:3

[model]
a0 = 2.0025
b0 = 0.050125
nu = 1

[window]
expand = 0.1

[mcmc]
burnin = 40
thin = 2
keep = 30
seed = 4
"""

COV = """
[data]
path = {path}
response = y
covariates = x1, x2

[model]
kind = cov

[mcmc]
burnin = 20
thin = 1
keep = 15
seed = 2
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(args):
    return cli.main([str(a) for a in args])


def test_fit_writes_all_outputs(tmp_path):
    cfg = write(tmp_path, "run.ini", NOCOV)
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--out", out]) == 0
    for name in ("trace.csv", "labels.csv", "run.json", "summary.json", "k_pmf.csv", "partition.csv", "predictive.csv"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kept"] == 30
    assert sum(summary["k"]["pmf"].values()) == pytest.approx(1.0)
    assert summary["root_mse"] == pytest.approx(summary["mse"] ** 0.5)
    rows = (out / "partition.csv").read_text().splitlines()
    assert rows[0] == "item,group" and len(rows) == 101


def test_identical_seed_gives_identical_files(tmp_path):
    cfg = write(tmp_path, "run.ini", NOCOV)
    for d in ("a", "b"):
        assert run(["fit", "--config", cfg, "--out", tmp_path / d]) == 0
    for name in ("trace.csv", "labels.csv", "summary.json", "predictive.csv", "partition.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(["fit", "--config", cfg, "--seed", 99, "--out", tmp_path / "c"]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()


def test_analyze_reproduces_summary(tmp_path):
    cfg = write(tmp_path, "run.ini", NOCOV)
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--out", out]) == 0
    assert run(["analyze", out, "--out", tmp_path / "again"]) == 0
    assert (out / "summary.json").read_bytes() == (tmp_path / "again" / "summary.json").read_bytes()


def test_output_directory_from_environment(tmp_path, monkeypatch):
    cfg = write(tmp_path, "run.ini", NOCOV)
    monkeypatch.setenv("DPPMIX_OUT", str(tmp_path / "env"))
    assert run(["fit", "--config", cfg]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_multiple_chains_are_pooled(tmp_path):
    cfg = write(tmp_path, "run.ini", NOCOV)
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--chains", 2, "--out", out]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["chains"] == 2 and summary["kept"] == 60
    assert json.loads((out / "run.json").read_text())["seeds"] == [4, 5]


def test_covariate_fit_from_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 2))
    y = np.where(X[:, 0] > 0, 4.0, -4.0) + 0.3 * rng.standard_normal(40)
    lines = ["y,x1,x2"] + [f"{a},{b},{c}" for a, (b, c) in zip(y, X)]
    write(tmp_path, "data.csv", "\n".join(lines) + "\n")
    cfg = write(tmp_path, "cov.ini", COV.format(path="data.csv"))
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--out", out]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kind"] == "cov"
    assert summary["predictive_x"] == pytest.approx(X.mean(axis=0).tolist())
    header = (out / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[-4:] == ["gamma_1", "gamma_2", "beta_1", "beta_2"]


def test_prior_only_fit(tmp_path):
    cfg = write(tmp_path, "run.ini", NOCOV)
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--prior-only", "--out", out]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n"] == 0 and "mse" not in summary


def test_prior_sim_fixed_rho_matches_exact_mean(tmp_path):
    text = "[model]\nrho = 2\nnu = 2\n[window]\nlo = -5\nhi = 5\n[prior]\ndraws = 20000\n"
    cfg = write(tmp_path, "prior.ini", text)
    out = tmp_path / "out"
    assert run(["prior-sim", "--config", cfg, "--out", out]) == 0
    summary = json.loads((out / "prior_summary.json").read_text())
    assert summary["exact_mean"] == pytest.approx(2.0, abs=1e-6)
    assert abs(summary["mean"] - summary["exact_mean"]) <= 4 * summary["se_mean"]


@pytest.mark.parametrize(
    "text, code",
    [
        ("[bogus]\nx = 1\n", 1),
        ("[data]\npath = builtin:galaxy\n[model]\na0 = -1\n", 1),
        ("[data]\npath = builtin:galaxy\n[model]\nfamily = nope\n", 1),
        ("[data]\npath = builtin:galaxy\n[window]\nlo = 20\nhi = 30\n", 1),
        ("[data]\npath = missing.csv\n", 2),
        ("[data]\npath = builtin:unknown\n", 2),
        ("[data]\npath = builtin:galaxy\n[model]\nfamily = whittle_matern\nrho = 50\nalpha = 0.1\n", 1),
    ],
)
def test_error_exit_codes(tmp_path, capsys, text, code):
    cfg = write(tmp_path, "bad.ini", text)
    assert run(["fit", "--config", cfg, "--out", tmp_path / "out"]) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("dppmix: error: ")


def test_missing_config_and_corrupt_trace(tmp_path):
    assert run(["fit", "--config", tmp_path / "none.ini"]) == 1
    cfg = write(tmp_path, "run.ini", NOCOV)
    out = tmp_path / "out"
    assert run(["fit", "--config", cfg, "--out", out]) == 0
    text = (out / "trace.csv").read_text().splitlines()
    (out / "trace.csv").write_text("\n".join(text[:-1]) + "\n")
    assert run(["analyze", out]) == 2
    assert run(["analyze", tmp_path / "nothing"]) == 2


def test_bad_csv_is_a_data_error(tmp_path):
    write(tmp_path, "d.csv", "y,x1\n1.0,2.0\nfoo,3.0\n")
    spec = parse_config("[data]\npath = d.csv\ncovariates = x1\n", base_dir=tmp_path).data
    with pytest.raises(DataError):
        load_data(spec)
    spec = parse_config("[data]\npath = d.csv\ncovariates = x9\n", base_dir=tmp_path).data
    with pytest.raises(DataError):
        load_data(spec)


def test_config_validation():
    with pytest.raises(ConfigError):
        parse_config("[window]\nlo = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[mcmc]\nthin = 0\n")
    with pytest.raises(ConfigError):
        parse_config("[output]\nlevel = 2\n")
    cfg = parse_config("[data]\npath = builtin:galaxy\n", overrides={"seed": 7, "chains": 3})
    assert cfg.schedule.seed == 7 and cfg.chains == 3 and cfg.kind == "nocov"


def test_trace_files_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(3)
    tr = Trace(n=5, kind="cov")
    for it in range(4):
        k = int(rng.integers(1, 4))
        beta = rng.standard_normal((k, 2))
        beta[0] = 0.0
        tr.append(CovMixtureState(rng.standard_normal(k), rng.random(k) + 0.1, rng.standard_normal((k, 2)),
                                  beta, rng.integers(0, k, 5), float(rng.random()), 2.0), it)
    io.write_traces(tmp_path, [tr], p=2)
    back = io.read_traces(tmp_path, "cov", 5, 2)[0]
    assert back.iterations == tr.iterations
    for a, b in zip(tr.states, back.states):
        for name in ("mu", "sigma2", "gamma", "beta", "labels"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert a.rho == b.rho
    np.testing.assert_array_equal(back.coclust, tr.coclust)
    with pytest.raises(io.TraceFormatError):
        io.read_traces(tmp_path, "nocov", 5)


def test_nocov_trace_round_trip(tmp_path):
    tr = Trace(n=3)
    tr.append(MixtureState(np.array([0.1, 2.0]), np.array([1.0, 0.5]), np.array([0.4, 0.6]),
                           np.array([0, 1, 1]), 3.5, 2.0), 10)
    io.write_traces(tmp_path, [tr])
    back = io.read_traces(tmp_path, "nocov", 3)[0]
    np.testing.assert_array_equal(back.states[0].w, [0.4, 0.6])
    with pytest.raises(io.TraceFormatError):
        io.read_traces(tmp_path, "nocov", 4)
