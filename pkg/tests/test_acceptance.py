"""Acceptance suite: one test per criterion, summarized at the end of the run.

Run with ``pytest tests/test_acceptance.py -v``; a ``criterion N: PASS/FAIL``
line per criterion is printed in the terminal summary.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from delaylens.config import make_config
from delaylens.ensembles import TreeParams, fit_gradient_boosting, fit_random_forest, permutation_importance
from delaylens.evaluation import auc, kfold_cv, log_loss, loo_cv, r2
from delaylens.fixture import FIXTURE_CONFIG, synthetic_areas, synthetic_events, two_cluster_grid
from delaylens.geo import build_queen_weights, read_areas
from delaylens.gp import RbfHyperparams, fit_gp, kernel_matrix, predict_gp, select_hyperparams
from delaylens.ingest import MedianImputer, binarize_delay, read_feature_table, read_normalized
from delaylens.moran import local_morans_i, permutation_pseudo_p
from delaylens.pipeline import area_matrix, build_event_dataset, run_aggregated, run_disaggregated

from test_moran import literal, random_instance, textbook

E2E_LIMIT_S = 60.0


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_criterion_01_delay_boundaries():
    """delay labels at 0, 1, 2, 30, 31 days"""
    got = [(binarize_delay(d).d_day, binarize_delay(d).d_month) for d in (0, 1, 2, 30, 31)]
    assert got == [(1, 1), (1, 1), (0, 1), (0, 1), (0, 0)]


# 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2)
def test_criterion_02_local_moran_oracles():
    """local Moran's I equals both direct transcriptions within 1e-12 on 50 instances"""
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, W = random_instance(rng)
        assert len(p) <= 30
        assert np.max(np.abs(local_morans_i(p, W, "standard") - textbook(p, W))) <= 1e-12
        assert np.max(np.abs(local_morans_i(p, W, "paper-literal") - literal(p, W))) <= 1e-12


# 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_criterion_03_permutation_inference():
    """pseudo p bounds; two-cluster cores <= 0.05 and background median >= 0.2"""
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, W = random_instance(rng)
        for mode in ("standard", "paper-literal"):
            res = permutation_pseudo_p(p, W, 99, seed=int(rng.integers(1000)), mode=mode)
            assert np.all(res.pseudo_p >= 1 / 100) and np.all(res.pseudo_p <= 1)
    areas, cores = two_cluster_grid()
    areas = sorted(areas, key=lambda a: a.area_id)
    ids = [a.area_id for a in areas]
    res = permutation_pseudo_p([a.p_day for a in areas], build_queen_weights(areas), 999, seed=7)
    assert np.all(res.pseudo_p >= 1 / 1000) and np.all(res.pseudo_p <= 1)
    assert max(res.pseudo_p[ids.index(c)] for c in cores) <= 0.05
    background = [res.pseudo_p[ids.index(f"G{r}{c}")] for r in range(3) for c in (3, 4)]
    assert np.median(background) >= 0.2


# 4 -------------------------------------------------------------------------


@pytest.mark.criterion(4)
def test_criterion_04_gp_exactness():
    """GP predictions match a dense direct solve (1e-8) and interpolate (1e-6)"""
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(2, 201))
        C = rng.uniform(-2, 2, size=(n, 2))
        y = rng.normal(size=n)
        h = RbfHyperparams(rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.01, 1.0))
        m = fit_gp(C, y, h)
        Q = rng.uniform(-2.5, 2.5, size=(25, 2))
        mean, var = predict_gp(m, Q)
        K = kernel_matrix(m.training_coords, m.training_coords, h) + m.diag_added * np.eye(n)
        Ks = kernel_matrix(m.training_coords, m.standardizer(Q), h)
        sol = np.linalg.solve(K, np.column_stack([y, Ks]))
        ref_mean = Ks.T @ sol[:, 0]
        ref_var = np.maximum(h.signal_variance - np.sum(Ks * sol[:, 1:], axis=0), 0.0)
        assert np.linalg.norm(mean - ref_mean) <= 1e-8 * max(np.linalg.norm(ref_mean), 1e-300)
        assert np.allclose(var, ref_var, rtol=1e-8, atol=1e-8 * h.signal_variance)
    C = rng.uniform(0, 1, size=(60, 2))
    y = rng.normal(size=60)
    m = fit_gp(C, y, RbfHyperparams(0.3, 1.0, 0.0))
    assert np.max(np.abs(predict_gp(m, C)[0] - y)) <= 1e-6


# 5 -------------------------------------------------------------------------


def _simulate_gp(seed, n=200, lengthscale=0.5, signal=1.0, noise=0.1):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 1, size=(n, 2))
    Z = (C - C.mean(0)) / C.std(0)
    K = kernel_matrix(Z, Z, RbfHyperparams(lengthscale, signal, 0.0)) + 1e-8 * np.eye(n)
    f = np.linalg.cholesky(K) @ rng.normal(size=n)
    return C, f + np.sqrt(noise) * rng.normal(size=n)


@pytest.mark.criterion(5)
def test_criterion_05_gp_recovery():
    """grid search recovers lengthscale 0.5 from {0.1, 0.5, 2.5} in >= 19/20 seeds"""
    grid = {"lengthscale": [0.1, 0.5, 2.5], "signal_variance": [0.5, 1.0, 2.0], "noise_variance": [0.05, 0.1, 0.2]}
    hits = sum(select_hyperparams(*_simulate_gp(s), grid)[0].lengthscale == 0.5 for s in range(20))
    assert hits >= 19, f"{hits}/20"


# 6 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_run(fixture_dir, tmp_path_factory):
    from delaylens.cli import main

    out = tmp_path_factory.mktemp("acc")
    fx = fixture_dir
    assert main(["ingest", "--crimes", f"{fx}/crimes.csv", "--schema", f"{fx}/schema.yaml", "--out", str(out)]) == 0
    assert main([
        "aggregate", "--events", str(out / "events.csv"), "--areas", f"{fx}/districts.geojson",
        "--tract-features", f"{fx}/tract_features.csv", "--tracts", f"{fx}/tracts.geojson", "--out", str(out / "areas.geojson"),
    ]) == 0
    records = read_normalized(out / "events.csv")
    data = build_event_dataset(records, read_feature_table(f"{fx}/tract_features.csv"))
    areas = read_areas(json.loads((out / "areas.geojson").read_text()))
    return data, areas


def _monotone(history):
    return all(b <= a for a, b in zip(history, history[1:]))


@pytest.mark.criterion(6)
def test_criterion_06_ensemble_sanity(fixture_run):
    """RF blob AUC > 0.99; GBM loss non-increasing on fixture runs; informative feature ranked first 20/20"""
    rng = np.random.default_rng(6)
    y = (np.arange(500) % 2).astype(float)
    X = rng.normal(size=(500, 2)) * 0.5 + np.where(y[:, None] == 1, 2.5, -2.5)
    rf = fit_random_forest(X, y, TreeParams.forest_defaults(n_trees=100, seed=6), task="classification")
    assert auc(y, rf.predict(X)) > 0.99

    data, areas = fixture_run
    cfg = make_config(FIXTURE_CONFIG)
    dis = TreeParams.boosting_defaults(**cfg["disaggregated"]["boosting"], seed=7)
    for target, labels in data.labels.items():
        for label, spec in data.groups.items():
            Xg = data.matrix(spec)
            g = fit_gradient_boosting(MedianImputer().fit(Xg).transform(Xg), labels, dis, task="classification")
            assert _monotone(g.training_metadata["train_loss"]), (target, label)
    agg = TreeParams.boosting_defaults(**cfg["aggregated"]["boosting"], seed=7)
    usable, _, Xa, _ = area_matrix(areas)
    for target in ("p_day", "p_month"):
        ya = np.array([getattr(a, target) for a in usable])
        g = fit_gradient_boosting(MedianImputer().fit(Xa).transform(Xa), ya, agg)
        assert _monotone(g.training_metadata["train_loss"]), target

    firsts = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        X = r.normal(size=(200, 4))
        y = X[:, 0] + 0.1 * r.normal(size=200)
        Xtr, Xte, ytr, yte = X[:150], X[150:], y[:150], y[150:]
        model = fit_random_forest(Xtr, ytr, TreeParams.forest_defaults(n_trees=50, seed=seed))
        imp = permutation_importance(model, Xte, yte, "MSE", 5, seed=seed)
        firsts += int(np.argmax(imp) == 0)
    assert firsts == 20


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7)
def test_criterion_07_metric_oracles():
    """AUC 0.75, LogLoss ln 2 and R2 of the mean prediction"""
    assert auc([1, 0, 1, 0], [0.9, 0.8, 0.3, 0.1]) == 0.75
    assert abs(log_loss([1, 0, 0, 1, 1], [0.5] * 5) - np.log(2)) <= 1e-12
    y = np.array([0.3, 1.7, 2.2, 5.0, -1.0])
    assert abs(r2(y, np.full(5, y.mean()))) <= 1e-12


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8)
def test_criterion_08_cv_contracts():
    """k = n equals LOO; memorizing probe sees no test rows; runs are byte-identical"""
    rng = np.random.default_rng(8)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)

    def ridge(Xtr, ytr, Xte):
        A = np.c_[Xtr, np.ones(len(Xtr))]
        w = np.linalg.solve(A.T @ A + 0.1 * np.eye(A.shape[1]), A.T @ ytr)
        return np.c_[Xte, np.ones(len(Xte))] @ w

    assert kfold_cv(ridge, X, y, 12, seed=1)[0].tobytes() == loo_cv(ridge, X, y).tobytes()

    ids = np.arange(40, dtype=float)[:, None]
    yy = rng.normal(size=40)

    def memorize(Xtr, ytr, Xte):
        seen = dict(zip(Xtr[:, 0], ytr))
        return np.array([seen.get(v, np.nan) for v in Xte[:, 0]])

    assert np.isnan(loo_cv(memorize, ids, yy)).all()
    for k in (2, 5, 10):
        assert np.isnan(kfold_cv(memorize, ids, yy, k, seed=k)[0]).all()

    areas = synthetic_areas(6, "linear+gp", seed=8)
    cfg = make_config({"aggregated": {"forest": {"n_trees": 20}, "boosting": {"n_trees": 20}, "gp": {"grid_points": 3}}})
    runs = [json.dumps(run_aggregated(areas, cfg, seed=8).to_dict(), sort_keys=True) for _ in range(2)]
    assert runs[0] == runs[1]


# 9 -------------------------------------------------------------------------

AREA_CFG = {
    "aggregated": {
        "targets": ["p_day"],
        "forest": {"n_trees": 100},
        "boosting": {"n_trees": 150},
        "gp": {"grid_points": 6},
    }
}


@pytest.mark.criterion(9)
def test_criterion_09_generative_recovery():
    """synthetic recovery of steps 1/2, null events near 0.5 AUC, victim-age group v ahead by >= 0.15"""
    cfg = make_config(AREA_CFG)
    for seed in (0, 1):
        t = run_aggregated(synthetic_areas(12, "linear+gp", seed), cfg, seed=seed).targets["p_day"]
        assert t["step1"]["R2"] > 0.5 and t["step2"]["R2"] > 0.2, (seed, t["step1"]["R2"], t["step2"]["R2"])
        t = run_aggregated(synthetic_areas(12, "noise", seed), cfg, seed=seed).targets["p_day"]
        assert t["step1"]["R2"] <= 0.05 and t["step2"]["R2"] <= 0.05, (seed, t["step1"]["R2"], t["step2"]["R2"])

    dcfg = make_config(FIXTURE_CONFIG)
    dcfg["disaggregated"]["confirm"] = False
    data = build_event_dataset(*synthetic_events(2000, "null", seed=0))
    rep = run_disaggregated(data, config=dcfg, seed=0)
    aucs = [m["AUC"] for c in rep.cells for m in c.candidates.values()]
    assert all(0.45 <= a <= 0.55 for a in aucs), aucs

    data = build_event_dataset(*synthetic_events(2000, "victim-age", seed=0))
    dcfg["disaggregated"]["groups"] = ["c", "z", "x", "v"]
    rep = run_disaggregated(data, config=dcfg, seed=0)
    for target in dcfg["disaggregated"]["targets"]:
        v = rep.cell(target, "v").metrics["AUC"]
        others = max(rep.cell(target, g).metrics["AUC"] for g in ("c", "z", "x"))
        assert v - others >= 0.15, (target, v, others)


# 10 ------------------------------------------------------------------------


def _e2e(root: Path, threads: int) -> float:
    env = {**os.environ, "SOURCE_DATE_EPOCH": "1700000000", "OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1"}
    env.pop("DELAYLENS_THREADS", None)
    fx, ing = root / "fx", root / "ingest"
    steps = [
        ["make-fixture", "--out", fx, "--seed", 7],
        ["ingest", "--crimes", fx / "crimes.csv", "--schema", fx / "schema.yaml", "--out", ing],
        ["aggregate", "--events", ing / "events.csv", "--areas", fx / "districts.geojson",
         "--tract-features", fx / "tract_features.csv", "--tracts", fx / "tracts.geojson", "--out", root / "areas.geojson"],
        ["moran", "--areas", root / "areas.geojson", "--value", "p_day", "--permutations", 999, "--seed", 7,
         "--out", root / "lisa.geojson"],
        ["temporal-profile", "--events", ing / "events.csv", "--out", root / "profile.csv"],
        ["fit-aggregated", "--areas", root / "areas.geojson", "--config", fx / "config.yaml", "--seed", 7,
         "--threads", threads, "--out", root / "agg.json"],
        ["fit-disaggregated", "--events", ing / "events.csv", "--tract-features", fx / "tract_features.csv",
         "--config", fx / "config.yaml", "--seed", 7, "--threads", threads, "--out", root / "dis.json"],
        ["report", "--aggregated", root / "agg.json", "--disaggregated", root / "dis.json", "--out", root / "report.txt"],
    ]
    t0 = time.perf_counter()
    for step in steps:
        cmd = [sys.executable, "-m", "delaylens.cli", *map(str, step)]
        subprocess.run(cmd, env=env, check=True, stdout=subprocess.DEVNULL)
    return time.perf_counter() - t0


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion(10)
def test_criterion_10_end_to_end(tmp_path):
    """full CLI chain on the fixture city: < 60 s single-threaded, byte-identical across runs and thread counts"""
    elapsed = _e2e(tmp_path / "a", 1)
    assert elapsed < E2E_LIMIT_S, f"{elapsed:.1f}s"
    _e2e(tmp_path / "b", 1)
    _e2e(tmp_path / "c", 4)
    a = _snapshot(tmp_path / "a")
    areas = json.loads(a["areas.geojson"])
    assert len(areas["features"]) == 60
    assert a["fx/crimes.csv"].count(b"\n") - 1 == 5000
    assert 0 < sum(f["properties"]["m"] for f in areas["features"]) <= 5000
    assert a == _snapshot(tmp_path / "b")
    assert a == _snapshot(tmp_path / "c")
