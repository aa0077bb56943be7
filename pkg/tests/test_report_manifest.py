import json

from delaylens.manifest import RunManifest, manifest_path, sha256_file, timestamp
from delaylens.report import aggregated_table, disaggregated_table, importance_table


def agg_report():
    cell = lambda mse, r2, mid=None: {"MSE": mse, "R2": r2, **({"model_id": mid} if mid else {})}  # noqa: E731
    return {
        "selection_metric": "LOO-CV MSE",
        "n_areas": 60,
        "seed": 7,
        "targets": {
            "p_day": {"step1": cell(0.01, 0.4, "rf"), "step2": cell(0.008, 0.05)},
            "p_month": {"step1": cell(0.02, 0.5, "gbm"), "step2": cell(0.01, None)},
        },
    }


def test_aggregated_table():
    text = aggregated_table(agg_report())
    assert "Step 1 winners: p_day: rf, p_month: gbm" in text
    assert "n/a" in text and "New York" in text and "0.243" in text
    assert "New York" not in aggregated_table(agg_report(), references=False)


def test_disaggregated_table():
    cells = [
        {"target": t, "feature_group": g, "model_id": "rf", "metrics": {"LogLoss": 0.6, "AUC": 0.55}}
        for t in ("d_day", "d_month")
        for g in ("c", "v")
    ]
    text = disaggregated_table({"cells": cells, "selection_metric": "10-fold CV LogLoss", "seed": 1, "skipped": [{"group": "x", "reason": "r"}]})
    assert "f(c)" in text and "f(v)" in text and "skipped group x" in text and "0.692" in text


def test_importance_table():
    entries = [
        {"target": "p_day", "feature_group": "x", "model_id": "rf", "metric": "MSE", "noise_floor": 0.001,
         "table": [{"rank": 1, "feature": "a", "importance": 0.5}, {"rank": 2, "feature": "b", "importance": 0.1}]},
        {"target": "d_day", "feature_group": "c", "model_id": "gp", "table": [], "note": "gp winner"},
    ]
    text = importance_table(entries, top=1)
    assert "a" in text and " b " not in text and "gp winner" in text


def test_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert timestamp() == "1970-01-01T00:00:00Z"
    src = tmp_path / "in.csv"
    src.write_text("a\n")
    out = tmp_path / "result.json"
    out.write_text("{}")
    m = RunManifest.for_inputs("cmd", [src, None], config_hash="abc", seed=3)
    m.add_output(out)
    path = m.write_for(out)
    assert path == manifest_path(out) == tmp_path / "result.manifest.json"
    data = json.loads(path.read_text())
    assert data["inputs"] == {"in.csv": sha256_file(src)} and data["outputs"]["result.json"] == sha256_file(out)
    assert data["seed"] == 3 and data["config_hash"] == "abc" and "threads" not in data
    assert path.read_text() == RunManifest.for_inputs("cmd", [src], "abc", 3, outputs=dict(m.outputs)).to_json()
