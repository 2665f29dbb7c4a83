import csv
import io
import json
import time

import numpy as np
import pytest

from dsmc import ConfigurationError
from dsmc.cli import main
from dsmc.experiments import (
    COLUMNS,
    ExperimentConfig,
    read_rows,
    run_experiment,
    run_theta_logistic_chain,
)
from dsmc.models import ThetaLogisticParams, simulate_theta_logistic


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(experiment="nope")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(T=[0])
    with pytest.raises(ConfigurationError):
        ExperimentConfig(methods=["pf"])
    with pytest.raises(ConfigurationError):
        ExperimentConfig(experiment="cox", params={"rho": 1.5})
    with pytest.raises(ConfigurationError):
        ExperimentConfig(experiment="constrained-rw", params={"sigma": -1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig(experiment="cox", params={"tau0": 1.0})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment": "cox", "colour": "blue"})


def test_config_hash_ignores_output_location():
    a = ExperimentConfig(experiment="cox", out="a.csv", workers=1)
    b = ExperimentConfig(experiment="cox", out="b.csv", workers=4)
    c = ExperimentConfig(experiment="cox", seed=5)
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_smoke_run_is_fast_and_complete():
    cfg = ExperimentConfig(experiment="cox", T=[7], N=[8], replicates=1, methods=["dsmc", "dsmc-rs", "dsmc-mh", "ffbs"])
    started = time.perf_counter()
    rows = run_experiment(cfg)
    assert time.perf_counter() - started < 5.0
    assert [r.method for r in rows] == ["dsmc", "dsmc-rs", "dsmc-mh", "ffbs"]
    assert all(not r.error and np.isfinite(r.estimate) for r in rows)
    assert rows[0].log_norm_const is not None and rows[1].log_norm_const is None
    assert rows[0].levels == 3


@pytest.mark.parametrize("experiment", ["cox", "constrained-rw", "lgssm-check", "theta-logistic"])
def test_every_experiment_runs(experiment, tmp_path):
    cfg = ExperimentConfig(experiment=experiment, T=[7], N=[16], replicates=2,
                           methods=["dsmc", "ffbs"], out=str(tmp_path / "out.csv"))
    run_experiment(cfg)
    rows = read_rows(tmp_path / "out.csv")
    assert len(rows) == 4
    assert list(rows[0]) == list(COLUMNS)
    assert all(r["error"] == "" for r in rows)


def test_byte_identical_csv(tmp_path):
    args = ["smooth", "--experiment", "cox", "--T", "7", "15", "--N", "8", "--replicates", "2",
            "--methods", "dsmc", "dsmc-rs", "ffbs", "--seed", "4", "--no-timing"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv"), "--workers", "3"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_rows_carry_seed_and_hash(tmp_path):
    out = tmp_path / "o.csv"
    main(["smooth", "--experiment", "constrained-rw", "--T", "5", "--N", "8", "--replicates", "3", "--out", str(out)])
    rows = read_rows(out)
    assert len({r["seed"] for r in rows}) == 3
    assert len({r["config_hash"] for r in rows}) == 1
    assert all(float(r["wall_time_ms"]) >= 0 for r in rows)


def test_row_reproducible_in_isolation(tmp_path):
    full = run_experiment(ExperimentConfig(experiment="cox", T=[9], N=[16], replicates=3, record_timing=False))
    alone = run_experiment(ExperimentConfig(experiment="cox", T=[9], N=[16], replicates=1, record_timing=False))
    assert full[0].estimate == alone[0].estimate and full[0].seed == alone[0].seed


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "constrained-rw", "T": [3], "N": [4], "replicates": 2,
                               "params": {"sigma": 0.3}}))
    out = tmp_path / "o.csv"
    assert main(["smooth", "--config", str(cfg), "--N", "6", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert {r["N"] for r in rows} == {"6"} and len(rows) == 2


def test_lazy_resampler_flag_selects_method(capsys):
    assert main(["smooth", "--experiment", "constrained-rw", "--T", "3", "--N", "4",
                 "--resampler", "rejection-lazy", "--no-timing"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["method"] for r in rows] == ["dsmc-rs"]


def test_failures_are_recorded_and_exit_nonzero(tmp_path, monkeypatch):
    from dsmc import experiments
    from dsmc.errors import DegenerateWeightsError

    def boom(*a, **k):
        raise DegenerateWeightsError("forced", (0, 1, 2))

    monkeypatch.setattr(experiments, "run_dsmc", boom)
    out = tmp_path / "o.csv"
    code = main(["smooth", "--experiment", "cox", "--T", "3", "--N", "4", "--out", str(out)])
    assert code == 1
    assert "DegenerateWeightsError" in read_rows(out)[0]["error"]


def test_bad_config_exit_code(capsys):
    assert main(["smooth", "--experiment", "cox", "--T", "0"]) == 2


def test_pgibbs_cli(tmp_path, monkeypatch):
    from dsmc import experiments

    ys = simulate_theta_logistic(ThetaLogisticParams(), 15, seed=1)[1]
    monkeypatch.setattr(experiments, "load_nutria", lambda: ys)
    out = tmp_path / "chain.csv"
    code = main(["pgibbs", "--sweeps", "6", "--N", "8", "--burn-in", "2", "--thin", "2", "--stars", "--out", str(out)])
    assert code == 0
    rows = read_rows(out)
    assert [r["sweep"] for r in rows] == ["3", "5"]
    assert len(rows[0]["changed_flags"]) == 16
    assert "x15" in rows[0]


def test_pgibbs_config_rejects_unknown(tmp_path):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"sweeps": 2, "colour": 1}))
    assert main(["pgibbs", "--config", str(cfg)]) == 2


def test_check_oracle_cli(capsys):
    assert main(["check-oracle", "--T", "5", "--N", "256", "--replicates", "5"]) == 0
    assert "max |z|" in capsys.readouterr().out


def test_bench_cli(capsys):
    assert main(["bench", "--N", "64", "--T", "3"]) == 0
    assert "gaussian_combine" in capsys.readouterr().out


def test_chain_driver_is_reproducible():
    ys = simulate_theta_logistic(ThetaLogisticParams(), 10, seed=3)[1]
    a = run_theta_logistic_chain(4, 8, seed=1, ys=ys)
    b = run_theta_logistic_chain(4, 8, seed=1, ys=ys)
    np.testing.assert_array_equal(a.stars, b.stars)
    np.testing.assert_array_equal(a.thetas, b.thetas)
    assert a.thetas.shape == (4, 5) and a.stars.shape == (5, 11)
