import dataclasses

import numpy as np
import pytest

from delaylens.config import config_hash, make_config
from delaylens.fixture import FIXTURE_CONFIG, synthetic_areas, synthetic_events
from delaylens.pipeline import (
    PipelineError,
    build_event_dataset,
    importance_report,
    rank_importances,
    run_aggregated,
    run_disaggregated,
)

FAST_AGG = {
    "aggregated": {
        "targets": ["p_day"],
        "forest": {"n_trees": 30},
        "boosting": {"n_trees": 40},
        "gp": {"grid_points": 4},
        "importance_repeats": 3,
        "importance_folds": 3,
    }
}


def fast_dis(**over):
    cfg = make_config(FIXTURE_CONFIG)
    d = cfg["disaggregated"]
    d.update({"confirm": False, "k": 3, "models": ["rf", "gbm"], "targets": ["d_month"]})
    d["forest"]["n_trees"] = 10
    d["boosting"]["n_trees"] = 10
    d.update(over)
    return cfg


def test_config_merge_and_hash():
    cfg = make_config({"aggregated": {"forest": {"n_trees": 7}}})
    assert cfg["aggregated"]["forest"]["n_trees"] == 7 and cfg["aggregated"]["forest"]["min_samples_leaf"] == 5
    assert config_hash(cfg) == config_hash(make_config({"aggregated": {"forest": {"n_trees": 7}}}))
    assert config_hash(cfg) != config_hash(make_config())
    with pytest.raises(ValueError):
        make_config({"aggregated": {"no_such_key": 1}})


def test_aggregated_report_shape_and_determinism():
    areas = synthetic_areas(6, "linear+gp", seed=1)
    cfg = make_config(FAST_AGG)
    a = run_aggregated(areas, cfg, seed=2).to_dict()
    b = run_aggregated(areas, cfg, seed=2).to_dict()
    assert a == b
    t = a["targets"]["p_day"]
    assert t["step1"]["model_id"] in ("rf", "gbm") and set(t["step1"]["candidates"]) == {"rf", "gbm"}
    assert len(t["oof_step1"]) == len(t["residuals"]) == 36 == a["n_areas"]
    assert t["step2"]["hyperparams"]["lengthscale"] > 0
    np.testing.assert_allclose(np.array(t["residuals"]) + t["oof_step1"], [ar.p_day for ar in sorted(areas, key=lambda x: x.area_id)])


def test_aggregated_errors():
    areas = synthetic_areas(4, "noise", seed=0)
    with pytest.raises(PipelineError, match="at least"):
        run_aggregated(areas, make_config(FAST_AGG))
    areas = synthetic_areas(6, "noise", seed=0)
    for a in areas:
        a.features["x0"] = 1.0
    with pytest.raises(PipelineError, match="constant"):
        run_aggregated(areas, make_config(FAST_AGG))


def test_event_dataset_blocks():
    recs, table = synthetic_events(120, "null", seed=0)
    data = build_event_dataset(recs, table)
    assert data.ids == sorted(data.ids) and data.X.shape == (120, len(data.columns))
    g = data.groups
    assert g["c"].columns == ("lon", "lat") and "victim_age" in g["v"].columns
    assert g["czxv"].columns == g["c"].columns + g["z"].columns + g["x"].columns + g["v"].columns
    assert set(data.labels) == {"d_day", "d_month"}
    assert data.victim_missing_rate == pytest.approx(0.0)


def test_missing_victims_skip_group_v():
    recs, table = synthetic_events(150, "null", seed=1)
    recs = [dataclasses.replace(r, victim=None) for r in recs]
    data = build_event_dataset(recs, table)
    rep = run_disaggregated(data, config=fast_dis(), seed=0)
    assert rep.skipped and rep.skipped[0]["group"] == "v"
    assert "v" not in {c.feature_group for c in rep.cells}
    assert not any(c.startswith("victim") for c in rep.group_columns["czxv"])


def test_disaggregated_cells_and_importance():
    recs, table = synthetic_events(300, "victim-age", seed=2)
    data = build_event_dataset(recs, table)
    cfg = fast_dis(groups=["v", "czxv"])
    rep = run_disaggregated(data, config=cfg, seed=5)
    assert [c.feature_group for c in rep.cells] == ["v", "czxv"]
    for c in rep.cells:
        assert c.model_id in ("rf", "gbm") and len(c.fold_assignments) == 300
        assert 0 <= c.metrics["AUC"] <= 1
    entries = importance_report(rep, data, cfg)
    v = next(e for e in entries if e["feature_group"] == "v")
    assert v["table"][0]["feature"] == "victim_age"


def test_single_class_target_fails():
    recs, table = synthetic_events(60, "null", seed=0)
    recs = [dataclasses.replace(r, reported_on=r.occurred_on) for r in recs]
    with pytest.raises(PipelineError, match="single class"):
        run_disaggregated(build_event_dataset(recs, table), config=fast_dis(), seed=0)


def test_rank_importances_ties():
    table = rank_importances(["a", "b", "c"], [0.1, 0.5, 0.1])
    assert [(r["feature"], r["rank"]) for r in table] == [("b", 1), ("a", 2), ("c", 2)]


def test_noise_features_stay_under_floor():
    areas = synthetic_areas(8, "noise", seed=0)
    cfg = make_config(FAST_AGG)
    rep = run_aggregated(areas, cfg, seed=0)
    (entry,) = importance_report(rep, areas, cfg)
    assert all(r["importance"] <= 3 * entry["noise_floor"] for r in entry["table"])
