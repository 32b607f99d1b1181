import json

import pytest

from evtflu import cli
from evtflu.errors import OptimizationError

from conftest import WEEK3


def run(args):
    return cli.main([str(a) for a in args])


def report(path):
    return json.loads(path.read_text())


def test_return_levels_without_data(tmp_path):
    assert run(["return-levels", "--threshold", 339, "--sigma", 392, "--exceed-freq", 0.88,
                "--alpha", 0.9, "--years", 1, "--out", tmp_path]) == 0
    rep = report(tmp_path / "return-levels_report.json")
    assert rep["schema_version"] == "1"
    assert rep["results"]["levels"][0]["level"] == pytest.approx(1192, rel=0.005)


def test_segment_is_deterministic(tmp_path, synthetic_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["segment", "--input", synthetic_file, "--out", a]) == 0
    assert run(["segment", "--input", synthetic_file, "--out", b]) == 0
    ra, rb = report(a / "segment_report.json"), report(b / "segment_report.json")
    ra.pop("generated_at"), rb.pop("generated_at")
    assert ra == rb
    assert (a / "epidemics.json").read_bytes() == (b / "epidemics.json").read_bytes()
    assert ra["config"]["seed"] == 0 and ra["results"]["n_epidemics"] > 30


def test_seed_from_environment(tmp_path, synthetic_file, monkeypatch):
    monkeypatch.setenv("EVT_SEED", "41")
    assert run(["segment", "--input", synthetic_file, "--out", tmp_path]) == 0
    assert report(tmp_path / "segment_report.json")["config"]["seed"] == 41
    assert run(["segment", "--input", synthetic_file, "--out", tmp_path, "--seed", 5]) == 0
    assert report(tmp_path / "segment_report.json")["config"]["seed"] == 5


def test_config_file_with_override(tmp_path, synthetic_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input_path": str(synthetic_file), "start_quantile": 0.85, "seed": 3}))
    assert run(["segment", "--config", cfg, "--start-quantile", 0.9, "--out", tmp_path]) == 0
    conf = report(tmp_path / "segment_report.json")["config"]
    assert conf["start_quantile"] == 0.9 and conf["seed"] == 3


def test_domain_errors_exit_2(tmp_path, capsys):
    assert run(["segment", "--bogus"]) == 2
    assert run(["segment", "--input", tmp_path / "missing.csv", "--out", tmp_path]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"start_quantile": 1.5}))
    assert run(["segment", "--config", bad, "--out", tmp_path]) == 2
    bad.write_text(json.dumps({"unknown_key": 1}))
    assert run(["segment", "--config", bad, "--out", tmp_path]) == 2
    assert "error" in capsys.readouterr().err


def test_numeric_errors_exit_3(tmp_path, synthetic_file, monkeypatch):
    def boom(*a, **k):
        raise OptimizationError("no finite likelihood", [])
    monkeypatch.setattr(cli.pipeline, "fit_target", boom)
    assert run(["fit-mvgp", "--input", synthetic_file, "--out", tmp_path, "--target", "week3"]) == 3


def test_predict_reference_model(tmp_path):
    model = tmp_path / "week3.json"
    model.write_text(json.dumps(WEEK3.to_dict()))
    assert run(["predict", "--y1", 366, "--y2", 540, "--model", model, "--base-max", 1729,
                "--out", tmp_path]) == 0
    rows = report(tmp_path / "predict_report.json")["results"]["predictions"]
    assert [r["kappa"] for r in rows] == [0.5, 0.75, 0.95, 1.0]
    assert json.loads((tmp_path / "predictions.json").read_text()) == rows


def test_full_pipeline(tmp_path, synthetic_file):
    common = ["--input", synthetic_file, "--out", tmp_path, "--seed", 11]
    assert run(["segment", *common]) == 0
    assert run(["fit-uni", *common]) == 0
    fits = tmp_path / "univariate_fits.json"
    assert run(["return-levels", *common, "--fits", fits]) == 0
    assert run(["fit-mvgp", *common, "--n-starts", 2]) == 0
    model = tmp_path / "week3_model.json"
    meta = json.loads(model.read_text())
    assert meta["target"] == "week3" and meta["history_max"] > 0
    assert run(["predict", *common, "--model", model, "--y1", 420, "--y2", 600]) == 0
    assert run(["simulate", *common, "--model", model, "--n-datasets", 3, "--n-vectors", 33]) == 0
    assert run(["anomaly", *common, "--model", model, "--n-datasets", 20, "--x", 0.5, 0.5, 0.5]) == 0
    rep = report(tmp_path / "anomaly_report.json")
    assert len(rep["results"]["calibration"]["quantiles"]) == 4
    assert run(["assess", *common, "--mode", "sim", "--model", model, "--n-datasets", 6]) == 0
    rep = report(tmp_path / "assess_report.json")
    assert (tmp_path / rep["artifacts"]["records"]).exists()
    for name in ("segment", "fit-uni", "return-levels", "fit-mvgp", "predict", "simulate", "anomaly", "assess"):
        rep = report(tmp_path / f"{name}_report.json")
        assert rep["schema_version"] == "1" and rep["config"]["seed"] == 11


def test_leave_one_out_paths(tmp_path, synthetic_file):
    common = ["--input", synthetic_file, "--out", tmp_path, "--seed", 2]
    assert run(["assess", *common, "--mode", "loo", "--target", "week3", "--n-starts", 1]) == 0
    res = report(tmp_path / "assess_report.json")["results"]["week3"]
    assert len(res["levels"]) == 4
    assert any(v == "no exceedance" for v in res["skipped"].values())
    assert run(["fit-mvgp", *common, "--target", "week3", "--n-starts", 1]) == 0
    assert run(["anomaly", *common, "--model", tmp_path / "week3_model.json", "--n-datasets", 15,
                "--n-starts", 1, "--loo"]) == 0
    loo = report(tmp_path / "anomaly_report.json")["results"]["leave_one_out"]
    assert len(loo) > 30 and all("season" in r for r in loo)
