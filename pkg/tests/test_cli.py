import json
import logging
import warnings

import numpy as np
import pytest

from mzrenewal import KernelSeries, TransitionSeries
from mzrenewal.cli import RunConfig, main, validate_config
from mzrenewal.errors import ConfigurationError
from mzrenewal.trajio import FiniteChainSpec

from conftest import gateway_chain


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MZRENEWAL_CONFIG", raising=False)
    gateway_chain().to_json(tmp_path / "chain.json")
    return tmp_path


SMALL = ["--tau", "1", "--t-max", "20", "--t-mem", "10"]


def _run(*args):
    return main([str(a) for a in args])


def test_validate_defaults_silent():
    cfg, notes = validate_config(RunConfig(t_mem=450.0, t_max=900.0))
    assert notes == []
    assert cfg.t_trunc == 900.0 and cfg.horizon == 900.0 and cfg.tau_I == 30.0


def test_validate_warns_near_t_max():
    _, notes = validate_config(RunConfig(t_mem=900.0, t_max=900.0))
    assert any("fewer terms to optimize over" in n for n in notes)
    _, notes = validate_config(RunConfig(t_mem=60.0, t_max=900.0))
    assert notes


def test_validate_aggregates_errors():
    with pytest.raises(ConfigurationError) as exc:
        validate_config(RunConfig(fine_step=0.7, tau=30.0, t_mem=451.0))
    msg = str(exc.value)
    assert "tau:" in msg and "t_mem:" in msg


def test_tau_not_multiple_of_fine_step():
    with pytest.raises(ConfigurationError, match="tau"):
        validate_config(RunConfig(fine_step=4.0, tau=30.0))


def test_missing_input_exit_code(workdir, capsys):
    assert _run("fit", "--transitions", "nope.json", "--out", "k.json") == 1
    assert "nope.json" in capsys.readouterr().err


def test_unknown_flag_exit_code(workdir):
    with pytest.raises(SystemExit) as exc:
        _run("fit", "--transitions", "a", "--out", "b", "--bogus")
    assert exc.value.code == 1


def test_numerical_failure_exit_code(workdir):
    KernelSeries(1.0, [[[2.0, 0.0], [0.0, 1.0]]]).to_json(workdir / "k.json")
    assert _run("infer", "--kernels", "k.json", "--out", "t.json", *SMALL) == 2


def test_config_file_and_env(workdir, monkeypatch):
    (workdir / "cfg.json").write_text(json.dumps({"tau": 1, "t_max": 20, "t_mem": 10, "seed": 4}))
    monkeypatch.setenv("MZRENEWAL_CONFIG", "cfg.json")
    assert _run("gen-chain", "--chain", "chain.json", "--steps", "500", "--out", "a.csv") == 0
    assert _run("gen-chain", "--chain", "chain.json", "--steps", "500", "--out", "b.csv", "--seed", "4") == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()
    assert _run("gen-chain", "--chain", "chain.json", "--steps", "500", "--out", "c.csv", "--seed", "5") == 0
    assert (workdir / "a.csv").read_bytes() != (workdir / "c.csv").read_bytes()
    (workdir / "bad.json").write_text(json.dumps({"tua": 1}))
    assert _run("gen-chain", "--config", "bad.json", "--chain", "chain.json", "--steps", "5", "--out", "d.csv") == 1


def test_warning_logged(workdir, caplog):
    ts = TransitionSeries(1.0, np.stack([np.eye(2)] * 21))
    ts.to_json(workdir / "ts.json")
    with caplog.at_level(logging.WARNING, logger="mzrenewal"):
        assert _run("fit", "--transitions", "ts.json", "--out", "k.json", "--tau", "1", "--t-max", "20", "--t-mem", "20") == 0
    assert "fewer terms to optimize over" in caplog.text


def test_markov_fit_has_one_nonzero_kernel(workdir):
    m = np.array([[0.9, 0.1], [0.3, 0.7]])
    FiniteChainSpec(m, [1, 2]).to_json(workdir / "markov.json")
    common = ["--fine-step", "30", "--tau", "30", "--tau-I", "0"]
    assert _run("gen-chain", "--chain", "markov.json", "--steps", "20000", "--out", "l.csv", "--seed", "1", *common) == 0
    assert _run("build-jump", "--traj", "l.csv", "--out", "jp.csv", *common) == 0
    assert _run("estimate", "--jump", "jp.csv", "--out-transitions", "ts.json", *common) == 0
    assert _run("fit", "--transitions", "ts.json", "--t-mem", "30", "--t-max", "900", "--out", "k.json", *common) == 0
    doc = json.loads((workdir / "k.json").read_text())
    assert len(doc["kernels"]) == 1
    assert np.abs(np.array(doc["kernels"][0]) - m).max() < 0.02


def test_full_chain_of_subcommands_is_byte_reproducible(workdir):
    def run_all(tag):
        out = workdir / tag
        out.mkdir()
        steps = [
            ("gen-chain", "--chain", "chain.json", "--steps", "20000", "--seed", "3", "--out", out / "l.csv"),
            ("build-jump", "--traj", out / "l.csv", "--out", out / "jp.csv", "--tau-I", "2"),
            ("estimate", "--jump", out / "jp.csv", "--out-transitions", out / "ts.json", "--out-jumps", out / "jd.json"),
            ("fit", "--transitions", out / "ts.json", "--out", out / "k.json"),
            ("infer", "--kernels", out / "k.json", "--out", out / "inf.json"),
            ("invert", "--transitions", out / "ts.json", "--tol", "1", "--consistency", "1",
             "--stochastic-tol", "1", "--out", out / "inv.json"),
            ("error", "--reference", out / "jd.json", "--estimate", out / "inv.json", "--out", out / "err.json"),
            ("simulate", "--jumps", out / "jd.json", "--max-jumps", "200", "--seed", "2", "--out", out / "sim.csv"),
            ("baseline", "--jump", out / "jp.csv", "--out", out / "base.json"),
            ("oracle", "--chain", "chain.json", "--q", "2", "--n-max", "10", "--out-dir", out / "oracle"),
            ("convergence", "--chain", "chain.json", "--q", "1", "2", "3", "--n-max", "20", "--out", out / "conv.json"),
            ("pipeline", "--traj", out / "l.csv", "--tau-I", "2", "--kernel-counts", "1", "2", "3",
             "--out-dir", out / "pipe"),
        ]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for step in steps:
                assert _run(*step, *SMALL) == 0, step[0]
        return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    first, second = run_all("a"), run_all("b")
    assert first.keys() == second.keys()
    for key in first:
        assert first[key] == second[key], key
    summary = json.loads(first[next(k for k in first if k.name == "summary.json")])
    assert [r["kernels"] for r in summary["kernel_study"]["rows"]] == [1, 2, 3]
    assert "inversion" in summary["kernel_study"]["rows"][0]
    csv_text = first[next(k for k in first if k.name == "error_vs_kernels.csv")].decode()
    assert csv_text.splitlines()[0] == "kernels,t_mem,error"

