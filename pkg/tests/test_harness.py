import json
import math

import numpy as np
import pytest

from mfbsde.harness import (
    ConfigError,
    emit_report,
    fit_loglog_slope,
    parse_config,
    run_clt_study,
    run_convergence_study,
    StudyReport,
)
from mfbsde.noise import StreamKey, generator


MINIMAL = {
    "model": {"name": "ou_mean_field", "beta": 1.0, "s": 0.5, "x0": [1.0], "T": 1.0},
    "study": {"kind": "convergence", "n_values": [8, 16, 32], "seed": 7},
}


def test_minimal_config_gets_documented_defaults():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg.steps == 64
    assert cfg.study["degree"] == 2
    assert cfg.study["picard_sweeps"] == 5
    assert cfg.study["metrics"] == ["x", "y", "z"]


def test_missing_seed_is_reported_by_name():
    doc = {"model": {"name": "constant"}, "study": {"kind": "convergence", "n_values": [8, 16, 32]}}
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    assert any("seed" in v for v in err.value.violations)


def test_non_increasing_n_list_rejected():
    doc = dict(MINIMAL)
    doc["study"] = {"kind": "convergence", "n_values": [16, 8, 32], "seed": 1}
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    assert any("strictly increasing" in v for v in err.value.violations)


def test_all_violations_collected_not_just_first():
    doc = {
        "model": {"name": "nope", "bogus": 1},
        "study": {"kind": "weird", "n_values": [1], "mystery": 2},
        "extra": {},
    }
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    v = err.value.violations
    assert len(v) >= 5
    assert any("unknown top-level key" in s for s in v)
    assert any("mystery" in s for s in v)


def test_unknown_model_param_rejected():
    doc = {
        "model": {"name": "ou_mean_field", "beta": 1.0, "sigma": 0.5},
        "study": {"kind": "convergence", "n_values": [8, 16, 32], "seed": 3},
    }
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    assert any("sigma" in s for s in err.value.violations)


def test_slope_estimator_self_test():
    # errors c/N with 5 percent multiplicative noise fit to slope near -1
    rng = generator(StreamKey(seed=505))
    ns = np.array([8, 16, 32, 64, 128, 256])
    for _ in range(10):
        errors = (3.0 / ns) * (1.0 + 0.05 * rng.standard_normal(len(ns)))
        fit = fit_loglog_slope(ns, errors, 0.05 * errors)
        assert -1.1 <= fit["slope"] <= -0.9


def test_slope_estimator_degrades_below_three_points():
    fit = fit_loglog_slope([8, 16, 32], [1.0, float("nan"), 0.25], [0.1, 0.1, 0.1])
    assert fit["slope"] is None
    assert fit["verdict"] == "degraded"


def test_emit_report_empty_study(tmp_path):
    report = StudyReport("convergence", {}, {}, [], {})
    written = emit_report(report, tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["verdict"] == "no-data"
    assert doc["schema_version"] == 1
    assert written == [str(tmp_path / "report.json")]


def _mini_convergence_config(seed=11, metrics=("x",)):
    return parse_config(
        json.dumps(
            {
                "model": {"name": "ou_mean_field", "beta": 1.0, "s": 0.5, "x0": [1.0], "T": 1.0},
                "grid": {"steps": 16},
                "study": {
                    "kind": "convergence",
                    "n_values": [4, 8, 16],
                    "reps": 64,
                    "inner_paths": 32,
                    "env_cloud": 512,
                    "metrics": list(metrics),
                    "seed": seed,
                },
            }
        )
    )


def test_convergence_study_rows_and_files(tmp_path):
    cfg = _mini_convergence_config(metrics=("x", "y", "z"))
    report = run_convergence_study(cfg)
    rows = report.tables["errors"]
    assert len(rows) == 3 * 3  # |N list| x 3 metrics
    written = emit_report(report, tmp_path)
    assert str(tmp_path / "errors.csv") in written
    assert str(tmp_path / "slope.csv") in written
    lines = (tmp_path / "errors.csv").read_text().strip().splitlines()
    assert lines[0] == "N,metric,value,stderr"
    assert len(lines) == 1 + 9


def test_convergence_study_decoupled_verdict_exact():
    cfg = parse_config(
        json.dumps(
            {
                "model": {"name": "constant", "b0": 0.2, "s": 1.0, "phi0": 1.0},
                "grid": {"steps": 16},
                "study": {
                    "kind": "convergence",
                    "n_values": [4, 8, 16],
                    "reps": 32,
                    "inner_paths": 32,
                    "env_cloud": 64,
                    "seed": 21,
                },
            }
        )
    )
    report = run_convergence_study(cfg)
    assert all(r["value"] == 0.0 for r in report.tables["errors"])
    assert all(s.get("verdict") == "exact" for s in report.slopes.values())
    assert all(v["passed"] for v in report.verdicts)


def test_convergence_self_reference_mode_for_bounded_model():
    # no closed form: the limit reference is the cloud law itself; errors
    # still decay at the environment-size rate
    cfg = parse_config(
        json.dumps(
            {
                "model": {"name": "tanh_bounded", "s": 1.0, "rho": 0.4, "kappa": 0.0},
                "grid": {"steps": 16},
                "study": {
                    "kind": "convergence",
                    "n_values": [4, 16, 64],
                    "reps": 400,
                    "env_cloud": 1024,
                    "metrics": ["x"],
                    "seed": 77,
                },
            }
        )
    )
    report = run_convergence_study(cfg)
    assert report.provenance["reference"].startswith("self_reference")
    vals = {r["N"]: r["value"] for r in report.tables["errors"]}
    assert vals[4] > vals[16] > vals[64] > 0
    slope = report.slopes["x"]["slope"]
    assert -1.5 <= slope <= -0.5


def test_reports_reproducible_modulo_timestamp(tmp_path):
    cfg_a = _mini_convergence_config(seed=99)
    cfg_b = _mini_convergence_config(seed=99)
    emit_report(run_convergence_study(cfg_a), tmp_path / "a")
    emit_report(run_convergence_study(cfg_b), tmp_path / "b")
    doc_a = json.loads((tmp_path / "a" / "report.json").read_text())
    doc_b = json.loads((tmp_path / "b" / "report.json").read_text())
    doc_a.pop("timestamp")
    doc_b.pop("timestamp")
    assert doc_a == doc_b
    assert (tmp_path / "a" / "errors.csv").read_bytes() == (
        tmp_path / "b" / "errors.csv"
    ).read_bytes()


def test_clt_study_smoke(tmp_path):
    cfg = parse_config(
        json.dumps(
            {
                "model": {"name": "ou_mean_field", "beta": 1.0, "s": 0.5, "x0": [1.0], "T": 1.0},
                "grid": {"steps": 16},
                "study": {
                    "kind": "clt",
                    "n": 32,
                    "reps": 256,
                    "members": 256,
                    "inner_paths": 32,
                    "env_cloud": 512,
                    "kernel_cloud": 2048,
                    "center_cloud": 2048,
                    "field_reps": 500,
                    "metrics": ["x"],
                    "lattice_times": [0.5, 1.0],
                    "seed": 31,
                },
            }
        )
    )
    report = run_clt_study(cfg)
    assert "x@1.0" in report.comparison["probes"]
    names = {v["criterion"] for v in report.verdicts}
    assert "field_covariance" in names
    written = emit_report(report, tmp_path)
    assert str(tmp_path / "covariance.csv") in written
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["kind"] == "clt"


def test_cli_validate_and_forward(tmp_path):
    from mfbsde.cli import main

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(MINIMAL))
    assert main(["validate", "--config", str(cfg_path)]) == 0
    bad = dict(MINIMAL)
    bad["study"] = {"kind": "convergence", "n_values": [8], "seed": 1}
    cfg_path.write_text(json.dumps(bad))
    assert main(["validate", "--config", str(cfg_path)]) == 1

    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps(MINIMAL["model"]))
    out_csv = tmp_path / "paths.csv"
    rc = main(
        [
            "forward",
            "--model", str(model_path),
            "--n", "8",
            "--steps", "8",
            "--reps", "5",
            "--seed", "42",
            "--env-cloud", "256",
            "--out", str(out_csv),
        ]
    )
    assert rc == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "rep,t,coord,value"
    assert len(lines) == 1 + 5 * 9  # reps * (steps + 1) rows


def test_cli_backward_limit_mode(tmp_path):
    from mfbsde.cli import main

    model_path = tmp_path / "model.json"
    model_path.write_text(
        json.dumps({"name": "mf_bsde_linear", "beta": 1.0, "s": 1.0, "x0": [1.0], "T": 1.0})
    )
    out_csv = tmp_path / "bsde.csv"
    rc = main(
        [
            "backward",
            "--model", str(model_path),
            "--n", "limit",
            "--steps", "16",
            "--reps", "128",
            "--seed", "17",
            "--out", str(out_csv),
        ]
    )
    assert rc == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "rep,t,y,z_1"
    y0 = float(lines[1].split(",")[2])
    assert abs(y0 - 2 * math.e) < 0.6  # rough location check on one path
