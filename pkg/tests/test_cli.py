import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dershap import cli
from dershap.validation import CheckResult


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(path):
    return json.loads((path / "report.json").read_text())


def normalized(payload, label):
    return next(np.array(r["normalized"]) for r in payload["reports"] if r["label"] == label)


@pytest.mark.parametrize("estimator", ["mc", "quad"])
def test_linear_dgsm(tmp_path, capsys, estimator):
    code, out, _ = run(["analyze", "--model", "linear:3,1", "--estimator", estimator, "--out", tmp_path], capsys)
    assert code == 0
    np.testing.assert_allclose(normalized(report(tmp_path), "dgsm"), [0.9, 0.1], rtol=1e-12)
    assert "dgsm: 0.9000 0.1000" in out


def test_bilinear_dershap_mc(tmp_path, capsys):
    code, _, _ = run(["analyze", "--model", "bilinear", "--samples", 1_000_000, "--out", tmp_path], capsys)
    assert code == 0
    assert np.all(np.abs(normalized(report(tmp_path), "dershap") - 0.5) <= 0.005)


def test_outputs(tmp_path, capsys):
    code, _, _ = run(["analyze", "--model", "additive_sine", "--samples", 5000, "--seed", 3,
                      "--methods", "dgsm,dgsm_abs,activity,dershap,dershap_truncated", "--m", 2, "--k", 2,
                      "--out", tmp_path], capsys)
    assert code == 0
    payload = report(tmp_path)
    assert payload["metadata"]["seed"] == 3
    # C and dgsm_abs each draw 5000 samples
    assert payload["metadata"]["evaluations"]["model_evaluations"] == 10_000
    assert "elapsed_seconds" in payload["metadata"]
    labels = [r["label"] for r in payload["reports"]]
    assert labels == ["dgsm", "dgsm_abs", "activity(m=2)", "dershap", "dershap_truncated(k=2)"]
    for r in payload["reports"]:
        assert len(r["raw"]) == 3

    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["input"] + labels
    assert [r[0] for r in rows[1:]] == ["x0", "x1", "x2"]
    sums = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).sum(axis=0)
    assert np.all(np.abs(sums - 1.0) <= 1e-9)

    root = ET.parse(tmp_path / "chart.svg").getroot()
    assert root.get("viewBox") == "0 0 800 400"
    bars = [e for e in root.iter() if e.get("class") == "bar"]
    assert len(bars) == 3 * len(labels)
    for label in labels:
        assert [b.get("data-input") for b in bars if b.get("data-method") == label] == ["x0", "x1", "x2"]


def test_degenerate_csv_column(tmp_path, capsys, monkeypatch):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"marginals": [{"dist": "uniform", "a": 0, "b": 1}] * 2}))
    code, _, _ = run(["analyze", "--expr", "x0 - x0 + 1", "--vars", "x0,x1", "--spec", spec,
                      "--samples", 100, "--out", tmp_path / "o"], capsys)
    assert code == 0
    payload = report(tmp_path / "o")
    assert all(r["degenerate"] for r in payload["reports"])
    assert all(r["normalized"] == [0.0, 0.0] for r in payload["reports"])


def test_format_selection(tmp_path, capsys):
    run(["analyze", "--model", "bilinear", "--samples", 100, "--format", "csv", "--out", tmp_path], capsys)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["report.csv"]


def strip_elapsed(path):
    payload = report(path)
    del payload["metadata"]["elapsed_seconds"]
    return payload


def test_reproducible_report(tmp_path, capsys):
    args = ["analyze", "--model", "ebola_sierra_leone", "--samples", 70_000, "--seed", 5, "--workers", 2]
    run(args + ["--out", tmp_path / "a"], capsys)
    run(args + ["--out", tmp_path / "b"], capsys)
    a = (tmp_path / "a" / "report.json").read_text().splitlines()
    b = (tmp_path / "b" / "report.json").read_text().splitlines()
    assert [x for x in a if "elapsed_seconds" not in x] == [x for x in b if "elapsed_seconds" not in x]


def test_worker_count_does_not_change_numbers(tmp_path, capsys):
    base = ["analyze", "--model", "ebola_liberia", "--samples", 140_000, "--seed", 1]
    run(base + ["--workers", 1, "--out", tmp_path / "w1"], capsys)
    run(base + ["--workers", 3, "--out", tmp_path / "w3"], capsys)
    a, b = strip_elapsed(tmp_path / "w1"), strip_elapsed(tmp_path / "w3")
    assert a["reports"] == b["reports"] and a["c_matrix"] == b["c_matrix"]


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "linear:1,1", "estimator": "quadrature", "points": 2,
                               "methods": ["dgsm"], "out": str(tmp_path / "from_file")}))
    code, _, _ = run(["analyze", "--config", cfg, "--model", "linear:3,1"], capsys)
    assert code == 0
    payload = report(tmp_path / "from_file")
    assert [r["label"] for r in payload["reports"]] == ["dgsm"]
    np.testing.assert_allclose(normalized(payload, "dgsm"), [0.9, 0.1])
    assert payload["c_matrix"]["estimator"] == {"kind": "quadrature", "q": 2}


def test_expression_with_spec_file(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"names": ["a", "b"], "marginals": [
        {"dist": "uniform", "a": 0, "b": 1}, {"dist": "normal", "mean": 0, "std": 1}]}))
    code, _, _ = run(["analyze", "--expr", "2*a + b", "--vars", "a,b", "--spec", spec,
                      "--samples", 100, "--out", tmp_path / "o"], capsys)
    assert code == 0
    np.testing.assert_allclose(normalized(report(tmp_path / "o"), "dgsm"), [0.8, 0.2])


def test_correlated_spec_mc(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"type": "correlated_normal", "mean": [0, 0], "cov": [[1, 0.9], [0.9, 1]]}))
    code, _, _ = run(["analyze", "--expr", "x0*x1", "--vars", "x0,x1", "--spec", spec,
                      "--samples", 1000, "--out", tmp_path / "o"], capsys)
    assert code == 0


def test_external_model(tmp_path, capsys, sum_model_cmd):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"marginals": [{"dist": "uniform", "a": 0, "b": 1}] * 3}))
    code, _, _ = run(["analyze", "--external-cmd", sum_model_cmd, "--spec", spec, "--samples", 1000,
                      "--out", tmp_path], capsys)
    assert code == 0
    payload = report(tmp_path)
    assert payload["metadata"]["evaluations"]["model_evaluations"] == 1000 * 4
    assert payload["metadata"]["external_spawns"] == 1
    np.testing.assert_allclose(normalized(payload, "dershap"), [1 / 3] * 3, rtol=1e-6)


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "--model", "nope"],
        ["analyze", "--model", "bilinear", "--methods", "magic"],
        ["analyze", "--model", "bilinear", "--m", "3"],
        ["analyze", "--model", "bilinear", "--methods", "dershap_truncated"],
        ["analyze", "--model", "bilinear", "--model", "x", "--expr", "x0"],
        ["analyze", "--expr", "x0 +", "--vars", "x0"],
        ["analyze", "--model", "bilinear", "--samples", "1"],
        ["analyze", "--model", "bilinear", "--gradient", "fd", "--fd-h", "0"],
        ["analyze", "--model", "bilinear", "--config", "/nonexistent.json"],
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, argv):
    code, _, err = run(argv + ["--out", tmp_path], capsys)
    assert code == 2
    assert len(err.strip().splitlines()) == 1


def test_quadrature_needs_uniform_inputs(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"marginals": [{"dist": "normal", "mean": 0, "std": 1}]}))
    code, _, _ = run(["analyze", "--expr", "x0", "--vars", "x0", "--spec", spec, "--estimator", "quad",
                      "--out", tmp_path], capsys)
    assert code == 2


def test_model_failure_exit_3(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"marginals": [{"dist": "uniform", "a": -1, "b": 1}]}))
    code, _, err = run(["analyze", "--expr", "log(x0)", "--vars", "x0", "--spec", spec, "--out", tmp_path], capsys)
    assert code == 3
    assert "log" in err and len(err.strip().splitlines()) == 1


def test_external_failure_exit_3(tmp_path, capsys, nan_model_cmd):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"marginals": [{"dist": "uniform", "a": 0, "b": 1}] * 2}))
    code, _, err = run(["analyze", "--external-cmd", nan_model_cmd, "--spec", spec, "--samples", 10,
                        "--out", tmp_path], capsys)
    assert code == 3
    assert "row 1" in err


def test_budget_exit_4(tmp_path, capsys):
    code, _, err = run(["analyze", "--model", "ebola_liberia", "--estimator", "quad", "--points", 9,
                        "--out", tmp_path], capsys)
    assert code == 4
    assert "budget" in err


def test_validate_shapley_oracle(capsys):
    code, out, _ = run(["validate", "shapley_oracle"], capsys)
    assert code == 0
    lines = [json.loads(x) for x in out.splitlines()]
    first = lines[0]
    assert (first["check"], first["passed"], first["total"]) == ("closed_form_vs_enumeration", 200, 200)
    assert all(x["status"] == "pass" for x in lines)


def test_validate_truncation(capsys):
    code, out, _ = run(["validate", "truncation"], capsys)
    line = json.loads(out)
    assert code == 0 and (line["passed"], line["total"]) == (800, 800)


def test_validate_gradients(capsys):
    code, out, _ = run(["validate", "gradients"], capsys)
    assert code == 0
    assert len(out.splitlines()) == sum(1 for _ in out.splitlines() if '"pass"' in _)


def test_validate_bounds_bilinear(capsys):
    code, out, _ = run(["validate", "bounds", "--model", "bilinear"], capsys)
    assert code == 0
    checks = {json.loads(x)["check"] for x in out.splitlines()}
    assert {"poincare", "activity_bound(m=1)", "activity_bound(m=2)"} <= checks


def test_validate_failure_exit_1(capsys, monkeypatch):
    monkeypatch.setitem(cli.SUITES, "truncation", lambda **kw: [CheckResult("truncation", "x", 1, 2)])
    code, out, _ = run(["validate", "truncation"], capsys)
    assert code == 1
    assert json.loads(out)["status"] == "fail"


def test_cache_save_load(tmp_path, capsys):
    path = tmp_path / "c.json"
    code, _, _ = run(["cache", "save", path, "--model", "bilinear", "--estimator", "quad", "--points", 4], capsys)
    assert code == 0
    saved = json.loads(path.read_text())
    code, out, _ = run(["cache", "load", path, "--model", "bilinear"], capsys)
    assert code == 0
    loaded = json.loads(out)
    assert loaded["entries"] == np.asarray(saved["entries"]).reshape(2, 2).tolist()
    code, _, err = run(["cache", "load", path, "--model", "linear"], capsys)
    assert code == 2 and "digest" in err
    path.write_text("{broken")
    code, _, _ = run(["cache", "load", path, "--model", "bilinear"], capsys)
    assert code == 2


def test_analyze_cache_reuse_has_zero_model_calls(tmp_path, capsys):
    cache = tmp_path / "c.json"
    base = ["analyze", "--model", "ebola_liberia", "--estimator", "quad", "--cache", cache]
    run(base + ["--methods", "activity", "--out", tmp_path / "a"], capsys)
    first = report(tmp_path / "a")
    assert first["metadata"]["evaluations"]["model_evaluations"] == 8**8
    run(base + ["--methods", "dershap", "--out", tmp_path / "b"], capsys)
    second = report(tmp_path / "b")
    assert second["metadata"]["evaluations"]["model_evaluations"] == 0
    assert second["c_matrix"]["from_cache"] is True
    assert second["c_matrix"]["entries"] == first["c_matrix"]["entries"]


def test_cache_refuses_other_estimator(tmp_path, capsys):
    cache = tmp_path / "c.json"
    run(["analyze", "--model", "bilinear", "--estimator", "quad", "--points", 3, "--cache", cache,
         "--out", tmp_path], capsys)
    code, _, err = run(["analyze", "--model", "bilinear", "--estimator", "quad", "--points", 4,
                        "--cache", cache, "--out", tmp_path], capsys)
    assert code == 2 and "estimator" in err


def test_unit_scaling_changes_digest(tmp_path, capsys):
    cache = tmp_path / "c.json"
    run(["analyze", "--model", "bilinear", "--samples", 100, "--cache", cache, "--out", tmp_path], capsys)
    code, _, _ = run(["analyze", "--model", "bilinear", "--samples", 100, "--cache", cache,
                      "--scaling", "unit", "--out", tmp_path], capsys)
    assert code == 2
