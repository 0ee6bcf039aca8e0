import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rex.cli import main
from rex.harness import (
    EQUIVALENCE_BASELINES,
    ConfigError,
    ExperimentConfig,
    ModelSpec,
    ScheduleSpec,
    Table,
    fitted_slope,
    ode_order_study,
    run,
    strong_order_study,
    write_report,
)
from rex.models import GaussianDataModel, GaussianMixtureModel
from rex.schedules import NoiseSchedule

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SL = NoiseSchedule.scaled_linear()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config
def test_from_dict_fills_experiment():
    cfg = ExperimentConfig.from_dict({"seed": 3}, "equivalence")
    assert cfg.experiment == "equivalence" and cfg.seed == 3
    assert cfg.resolved_baselines == EQUIVALENCE_BASELINES


def test_from_dict_conversions():
    cfg = ExperimentConfig.from_dict(
        {
            "experiment": "roundtrip",
            "schedule": {"name": "linear", "beta_hat1": 0.02},
            "model": {"kind": "mixture", "weights": [1, 1], "means": [[0, 1], [1, 0]], "stds": [1, 2]},
            "n_steps": [1, 5],
            "dims": [2],
        }
    )
    assert cfg.model.means == ((0.0, 1.0), (1.0, 0.0))
    assert cfg.n_steps == (1, 5)
    assert cfg.schedule.build().beta1 == pytest.approx(20.0)
    assert isinstance(cfg.model.build(cfg.schedule.build()), GaussianMixtureModel)


@pytest.mark.parametrize(
    "data",
    [
        {"experiment": "fid"},
        {"experiment": "convergence", "bogus": 1},
        {"experiment": "convergence", "schedule": {"name": "cosine"}},
        {"experiment": "convergence", "schedule": {"nme": "linear"}},
        {"experiment": "convergence", "tableaux": ["rk45"]},
        {"experiment": "convergence", "tableaux": ["shark"]},
        {"experiment": "convergence", "dynamics": "sde", "tableaux": ["rk4"]},
        {"experiment": "convergence", "dynamics": "sde", "n_steps": [3, 7], "refine": 2},
        {"experiment": "convergence", "dynamics": "pde"},
        {"experiment": "convergence", "n_steps": [10, 10]},
        {"experiment": "convergence", "n_steps": [20, 10]},
        {"experiment": "convergence", "n_steps": [0, 10]},
        {"experiment": "convergence", "zeta": 1.0},
        {"experiment": "convergence", "seed": -1},
        {"experiment": "convergence", "seed": 2**64},
        {"experiment": "stability", "n_iters": 10},
        {"experiment": "stability", "real_range": [1, -1]},
        {"experiment": "stability", "baselines": ["magic"]},
        {"experiment": "equivalence", "baselines": ["edict"]},
        {"experiment": "roundtrip", "model": {"kind": "flow"}},
        {"experiment": "roundtrip", "model": {"kind": "gaussian", "mu": []}},
        {"experiment": "roundtrip", "model": {"kind": "gaussian", "s": -1}},
        {"experiment": "roundtrip", "model": {"kind": "gaussian", "parameterization": "velocity"}},
        {"experiment": "roundtrip", "model": "gaussian"},
        {"experiment": "roundtrip", "cases": 0},
        {"experiment": "roundtrip", "tolerance": 0},
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_experiment_mismatch():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "stability"}, "roundtrip")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({})


def test_defaults_per_experiment():
    assert ExperimentConfig("convergence").resolved_tableaux == ("euler", "midpoint", "rk4")
    assert ExperimentConfig("convergence", dynamics="sde").resolved_tableaux == ("euler_maruyama", "shark")
    assert ExperimentConfig("convergence", dynamics="sde").resolved_n_steps == (8, 16, 32, 64)
    assert ExperimentConfig("convergence").resolved_n_steps == (10, 20, 40, 80, 160)
    assert ExperimentConfig("roundtrip").resolved_n_steps == (1, 10, 100)
    assert ExperimentConfig("stability").resolved_baselines == ("bdia", "obelm")
    assert ExperimentConfig("roundtrip", n_seeds=3, seed=2**64 - 1).seeds() == [2**64 - 1, 0, 1]


def test_model_spec_broadcasts_mu():
    spec = ModelSpec(mu=(0.5,), s=2.0)
    model = spec.build(SL, dim=3)
    assert isinstance(model, GaussianDataModel)
    np.testing.assert_array_equal(model.mu, [0.5, 0.5, 0.5])
    assert ScheduleSpec("scaled_linear").build().beta1 == pytest.approx(12.0)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_configs_parse(path):
    experiment = "convergence" if path.stem.startswith("convergence") else path.stem
    cfg = ExperimentConfig.from_json(path, experiment)
    assert cfg.experiment == experiment


def test_invalid_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(bad, "roundtrip")


# ---------------------------------------------------------------- reports
def test_write_report_formats(tmp_path):
    report = {"t": Table(("name", "x", "ok", "n"), [("a", 0.1, True, 3), ("b", 1e-20, np.bool_(False), np.int64(4))])}
    (path,) = write_report(report, tmp_path / "out")
    assert path.read_text() == "name,x,ok,n\na,0.10000000000000001,true,3\nb,9.9999999999999995e-21,false,4\n"


def test_fitted_slope():
    ns = [10, 20, 40]
    assert fitted_slope(ns, [1.0 / n**2 for n in ns]) == pytest.approx(2.0)
    assert math.isnan(fitted_slope(ns, [1.0, 0.0, 0.5]))


def test_ode_order_study_uses_exact_oracle():
    model = GaussianDataModel(SL, [0.0], 2.0, "noise")
    study = ode_order_study(model, "euler", (10, 20, 40), np.array([0.7]))
    assert study.n_steps == (10, 20, 40)
    assert all(e > 0 for e in study.errors)
    assert study.slope == pytest.approx(1.0, abs=0.2)


def test_strong_order_study_small():
    model = GaussianDataModel(NoiseSchedule.linear(beta_hat1=0.02), [0.0], 2.0)
    study = strong_order_study(model, "euler_maruyama", (4, 8), np.array([0.7]), seeds=[0, 1], refine=8)
    assert len(study.errors) == 2 and all(e > 0 for e in study.errors)
    with pytest.raises(ValueError):
        strong_order_study(model, "rk4", (4, 8), np.array([0.7]), seeds=[0], refine=8)


# ---------------------------------------------------------------- runners
def small(experiment, **kw):
    return ExperimentConfig(experiment, **kw)


def test_run_roundtrip_all_pass():
    cfg = small(
        "roundtrip",
        schedule=ScheduleSpec("scaled_linear"),
        n_steps=(1, 5),
        dims=(1, 3),
        model=ModelSpec(mu=(0.5,), s=0.7),
    )
    table = run(cfg)["roundtrip"]
    assert table.columns == ("dynamics", "parameterization", "tableau", "n_steps", "dim", "seed", "ulps_x", "ulps_x_hat", "pass")
    # parameterizations x builtin tableaux x n_steps x dims
    assert len(table.rows) == 2 * 8 * 2 * 2
    assert all(row[-1] for row in table.rows)


def test_run_equivalence_summary():
    cfg = small("equivalence", schedule=ScheduleSpec("scaled_linear"), baselines=("dpmpp1", "sde_dpm1"), cases=10)
    report = run(cfg)
    assert [r[0] for r in report["equivalence_summary"].rows] == ["dpmpp1", "sde_dpm1"]
    assert all(r[-1] for r in report["equivalence_summary"].rows)
    assert len(report["equivalence"].rows) == 20


def test_run_convergence_ode():
    cfg = small(
        "convergence",
        schedule=ScheduleSpec("scaled_linear"),
        model=ModelSpec(mu=(0.0,), s=2.0, parameterization="noise"),
        tableaux=("euler",),
        n_steps=(10, 20, 40),
    )
    rows = run(cfg)["convergence"].rows
    assert len(rows) == 3
    assert rows[0][-1] == pytest.approx(1.0, abs=0.2)


def test_run_stability_small():
    cfg = small("stability", grid_points=9, n_iters=1000)
    report = run(cfg)
    assert len(report["stability_grid"].rows) == 81
    assert {r[0] for r in report["stability_baselines"].rows} == {"bdia", "obelm"}
    summary = dict((r[0], r[1]) for r in report["stability_summary"].rows)
    assert "gamma_agreement" in summary and "radius_agreement" in summary


def test_run_brownian_small():
    rows = run(small("brownian_stats", samples=20_000, seed=11))["brownian_stats"].rows
    checks = {r[0]: r for r in rows}
    assert checks["replay_mismatches"][-1] and checks["dyadic_additivity_gap"][-1]


# ---------------------------------------------------------------- CLI
def test_cli_runs_and_is_deterministic(tmp_path, capsys):
    cfg = tmp_path / "eq.json"
    cfg.write_text(json.dumps({"schedule": {"name": "scaled_linear"}, "cases": 5, "baselines": ["dpm1"]}))
    assert main(["run", "equivalence", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "equivalence", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "equivalence.csv" in out
    for name in ("equivalence.csv", "equivalence_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["run", "equivalence", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "0x10"]) == 0
    assert (tmp_path / "c" / "equivalence.csv").read_bytes() != (tmp_path / "a" / "equivalence.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "equivalence_summary.csv")
    assert rows[0]["baseline"] == "dpm1" and rows[0]["pass"] == "true"


def test_cli_output_from_config(tmp_path):
    cfg = tmp_path / "bs.json"
    cfg.write_text(json.dumps({"samples": 1000, "output": str(tmp_path / "o")}))
    assert main(["run", "brownian_stats", "--config", str(cfg)]) == 0
    assert (tmp_path / "o" / "brownian_stats.csv").exists()


def test_cli_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"zeta": 2.0}))
    assert main(["run", "roundtrip", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["run", "roundtrip", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    cfg.write_text("{}")
    assert main(["run", "roundtrip", "--config", str(cfg)]) == 2
    assert "rex: error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "roundtrip", "--config", str(cfg), "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["run", "sampling", "--config", str(cfg)])


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "bs.json"
    cfg.write_text(json.dumps({"samples": 1000}))
    proc = subprocess.run(
        [sys.executable, "-m", "rex", "run", "brownian_stats", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "brownian_stats.csv").exists()
