"""End-to-end orchestration of the aggregated and disaggregated experiments.

Aggregated (area level)
    Step 1 fits a random forest and gradient boosting on social features to
    each area's reporting proportion and keeps the one with the lower
    LOO-CV MSE. Step 2 fits an RBF Gaussian process on area centroids to the
    *out-of-fold* Step 1 residuals, again scored by LOO-CV.

Disaggregated (event level)
    Each binary label is predicted from one feature group at a time
    (coordinates, calendar, tract features, victim attributes, all of them)
    with a GP classifier, a forest and a boosting model; the winner per cell
    is the one with the lowest k-fold log-loss.

Rows are put in canonical order (sorted by area/record id) before any
resampling, so results do not depend on input order.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import gp as gpmod
from .config import make_config
from .ensembles import TreeParams, fit_gradient_boosting, fit_random_forest, permutation_importance
from .evaluation import (
    CVReport,
    classification_metrics,
    fold_assignments,
    kfold_cv,
    loo_cv,
    regression_metrics,
)
from .geo import (
    AreaUnit,
    assign_points,
    compute_proportions,
    population_weighted_aggregate,
)
from .ingest import MedianImputer, RejectDiagnostic, join_features
from .temporal import TEMPORAL_COLUMNS, extract_temporal_features

log = logging.getLogger(__name__)

GROUP_LABELS = ("c", "z", "x", "v", "czxv")
MODEL_IDS = ("gp", "rf", "gbm")


class PipelineError(RuntimeError):
    pass


# trainers -------------------------------------------------------------------


def _forest_params(cfg, seed):
    return TreeParams.forest_defaults(**cfg, seed=seed)


def _boosting_params(cfg, seed):
    return TreeParams.boosting_defaults(**cfg, seed=seed)


def ensemble_trainer(model_id, task, cfg, seed):
    """``fit_predict`` closure: median-impute on the training split, fit, predict."""
    if model_id == "rf":
        params, fit = _forest_params(cfg["forest"], seed), fit_random_forest
    elif model_id == "gbm":
        params, fit = _boosting_params(cfg["boosting"], seed), fit_gradient_boosting
    else:
        raise ValueError(f"unknown ensemble {model_id!r}")

    def fit_predict(X_train, y_train, X_test):
        imp = MedianImputer().fit(X_train)
        model = fit(imp.transform(X_train), y_train, params, task=task)
        return model.predict(imp.transform(X_test))

    fit_predict.params = params
    return fit_predict


def gp_regression_trainer(gp_cfg):
    """Step 2 trainer: grid-selected RBF GP on coordinates, refit inside every fold."""
    standardize = gp_cfg.get("standardize", True)

    def fit_predict(C_train, e_train, C_test):
        grid = gp_cfg.get("grid") or gpmod.default_grid(e_train, gp_cfg.get("grid_points", 8))
        h, _ = gpmod.select_hyperparams(C_train, e_train, grid, standardize)
        model = gpmod.fit_gp(C_train, e_train, h, standardize)
        return gpmod.predict_gp(model, C_test)[0]

    return fit_predict


def _subsample(n, cap, seed):
    if cap is None or n <= cap:
        return np.arange(n)
    rng = np.random.default_rng([seed, n])
    return np.sort(rng.choice(n, size=cap, replace=False))


def _classifier_grid(points):
    return {
        "lengthscale": list(np.geomspace(0.25, 4.0, points)),
        "signal_variance": list(np.geomspace(0.1, 1.0, points)),
        "noise_variance": list(np.geomspace(0.1, 1.0, points)),
    }


def gp_classifier_trainer(gp_cfg, seed):
    """Least-squares GP classifier; hyperparameters fixed or grid-selected on a training subsample."""
    standardize = gp_cfg.get("standardize", True)
    fixed = gp_cfg.get("hyperparams")

    def fit_predict(X_train, y_train, X_test):
        imp = MedianImputer().fit(X_train)
        Xtr, Xte = imp.transform(X_train), imp.transform(X_test)
        # constant columns carry no distance information and would break standardization
        keep = np.ptp(Xtr, axis=0) > 0
        if not keep.any():
            keep[:] = True
        Xtr, Xte = Xtr[:, keep], Xte[:, keep]
        if fixed:
            h = gpmod.RbfHyperparams(**fixed)
        else:
            sel = _subsample(len(y_train), gp_cfg.get("selection_sample", 400), seed)
            h, _ = gpmod.select_hyperparams(
                Xtr[sel], y_train[sel], _classifier_grid(gp_cfg.get("grid_points", 3)), standardize
            )
        rows = _subsample(len(y_train), gp_cfg.get("max_train"), seed + 1)
        Xfit = Xtr[rows]
        noise = h.noise_variance
        if noise == 0 and len(np.unique(Xfit, axis=0)) < len(rows):
            noise = 1e-6
        clf = gpmod.gp_classify(Xfit, y_train[rows], gpmod.RbfHyperparams(h.lengthscale, h.signal_variance, noise), standardize)
        return clf.predict_proba(Xte)

    return fit_predict


def _cross_validate(trainer, X, y, cv, seed, stratified=False):
    if cv == "loo":
        return loo_cv(trainer, X, y), list(range(len(y)))
    preds, folds = kfold_cv(trainer, X, y, int(cv), seed, stratified)
    return preds, [int(f) for f in folds]


# aggregated experiment ------------------------------------------------------


@dataclass
class AggregatedReport:
    seed: int
    cv: str
    selection_metric: str
    feature_columns: list
    area_ids: list
    targets: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": "aggregated",
            "seed": self.seed,
            "cv": self.cv,
            "selection_metric": self.selection_metric,
            "n_areas": len(self.area_ids),
            "feature_columns": self.feature_columns,
            "area_ids": self.area_ids,
            "targets": self.targets,
        }


def area_matrix(areas, feature_columns=None):
    """Canonically ordered areas with observations, their feature matrix and centroids."""
    usable = [a for a in areas if a.m > 0 and math.isfinite(a.p_day) and math.isfinite(a.p_month)]
    usable.sort(key=lambda a: a.area_id)
    if feature_columns is None:
        cols = sorted({k for a in usable for k in a.features})
    else:
        cols = list(feature_columns)
    X = np.array([[a.features.get(c, math.nan) for c in cols] for a in usable], dtype=np.float64)
    X = X.reshape(len(usable), len(cols))
    G = np.array([a.centroid for a in usable], dtype=np.float64).reshape(len(usable), 2)
    return usable, cols, X, G


def run_aggregated(areas: list[AreaUnit], config: dict | None = None, seed: int | None = None) -> AggregatedReport:
    cfg_all = config if config is not None else make_config()
    cfg = cfg_all["aggregated"]
    seed = cfg_all.get("seed", 0) if seed is None else seed
    usable, cols, X, G = area_matrix(areas, cfg.get("feature_columns"))
    if len(usable) < cfg.get("min_areas", 20):
        raise PipelineError(f"need at least {cfg.get('min_areas', 20)} areas with events, got {len(usable)}")
    if not cols:
        raise PipelineError("areas carry no social features")
    for j, c in enumerate(cols):
        col = X[:, j][~np.isnan(X[:, j])]
        if len(col) == 0 or np.all(col == col[0]):
            raise PipelineError(f"degenerate feature matrix: column {c!r} is constant")
    cv = cfg.get("cv", "loo")
    report = AggregatedReport(
        seed=seed,
        cv=str(cv),
        selection_metric="LOO-CV MSE" if cv == "loo" else f"{cv}-fold CV MSE",
        feature_columns=cols,
        area_ids=[a.area_id for a in usable],
    )
    for target in cfg["targets"]:
        y = np.array([getattr(a, target) for a in usable], dtype=np.float64)
        candidates, oof = {}, {}
        for model_id in ("rf", "gbm"):
            preds, _ = _cross_validate(ensemble_trainer(model_id, "regression", cfg, seed), X, y, cv, seed)
            oof[model_id] = preds
            candidates[model_id] = regression_metrics(y, preds)
        winner = min(("rf", "gbm"), key=lambda m: candidates[m]["MSE"])
        resid = y - oof[winner]
        step2_pred, _ = _cross_validate(gp_regression_trainer(cfg["gp"]), G, resid, cv, seed)
        step2 = regression_metrics(resid, step2_pred)
        grid = cfg["gp"].get("grid") or gpmod.default_grid(resid, cfg["gp"].get("grid_points", 8))
        h_all, lml = gpmod.select_hyperparams(G, resid, grid, cfg["gp"].get("standardize", True))
        report.targets[target] = {
            "step1": {"model_id": winner, **candidates[winner], "candidates": candidates},
            "step2": {
                **step2,
                "hyperparams": h_all.to_dict(),
                "log_marginal_likelihood": lml,
            },
            "oof_step1": oof[winner].tolist(),
            "residuals": resid.tolist(),
            "oof_step2": step2_pred.tolist(),
        }
    return report


# disaggregated experiment ---------------------------------------------------


@dataclass(frozen=True)
class FeatureGroupSpec:
    label: str
    columns: tuple

    def __post_init__(self):
        if self.label not in GROUP_LABELS:
            raise ValueError(f"feature group label must be one of {GROUP_LABELS}")

    @staticmethod
    def union(specs) -> "FeatureGroupSpec":
        seen, cols = set(), []
        for s in specs:
            for c in s.columns:
                if c not in seen:
                    seen.add(c)
                    cols.append(c)
        return FeatureGroupSpec("czxv", tuple(cols))


@dataclass
class EventDataset:
    ids: list
    columns: list
    X: np.ndarray
    labels: dict
    groups: dict  # label -> FeatureGroupSpec
    victim_missing_rate: float = 0.0
    diagnostics: list = field(default_factory=list)

    def matrix(self, spec: FeatureGroupSpec) -> np.ndarray:
        idx = [self.columns.index(c) for c in spec.columns]
        return self.X[:, idx]


def _one_hot(values, prefix):
    cats = sorted({v for v in values if v is not None})
    cols = [f"{prefix}_{c}" for c in cats] + [f"{prefix}_missing"]
    M = np.zeros((len(values), len(cols)))
    for i, v in enumerate(values):
        M[i, len(cats) if v is None else cats.index(v)] = 1.0
    return cols, M


def build_event_dataset(records, feature_table, holiday_calendar=None, x_columns=None) -> EventDataset:
    """Assemble coordinate, calendar, tract and victim feature blocks for each record."""
    records = sorted(records, key=lambda r: r.id)
    diags = []
    tract_keys = [r.tract_id if r.tract_id is not None else "" for r in records]
    if x_columns is None:
        x_columns = [c for c in feature_table.columns if c != "population"]
    joined = join_features(tract_keys, feature_table, x_columns)
    diags.extend(
        RejectDiagnostic(int(d.row), f"record {records[d.row].id}: {d.reason}") for d in joined.diagnostics
    )
    recs = [records[i] for i in joined.kept]
    n = len(recs)

    C = np.array([r.point if r.point is not None else (math.nan, math.nan) for r in recs], dtype=np.float64).reshape(n, 2)
    Z = np.array(
        [extract_temporal_features(r.occurred_on, holiday_calendar).as_vector() for r in recs], dtype=np.float64
    ).reshape(n, len(TEMPORAL_COLUMNS))
    Xs = joined.values
    victims = [r.victim for r in recs]
    ages = np.array([math.nan if v is None or v.age is None else v.age for v in victims], dtype=np.float64)
    gcols, Gm = _one_hot([None if v is None else v.gender for v in victims], "victim_gender")
    ecols, Em = _one_hot([None if v is None else v.ethnicity for v in victims], "victim_ethnicity")
    miss = np.mean(
        [
            np.isnan(ages).mean() if n else 1.0,
            Gm[:, -1].mean() if n else 1.0,
            Em[:, -1].mean() if n else 1.0,
        ]
    )

    c_cols = ["lon", "lat"]
    z_cols = list(TEMPORAL_COLUMNS)
    x_cols = [f"tract_{c}" for c in x_columns]
    v_cols = ["victim_age", *gcols, *ecols]
    columns = c_cols + z_cols + x_cols + v_cols
    X = np.hstack([C, Z, Xs, ages[:, None], Gm, Em])
    groups = {
        "c": FeatureGroupSpec("c", tuple(c_cols)),
        "z": FeatureGroupSpec("z", tuple(z_cols)),
        "x": FeatureGroupSpec("x", tuple(x_cols)),
        "v": FeatureGroupSpec("v", tuple(v_cols)),
    }
    groups["czxv"] = FeatureGroupSpec.union([groups[k] for k in ("c", "z", "x", "v")])
    labels = {
        "d_day": np.array([r.labels.d_day for r in recs], dtype=np.float64),
        "d_month": np.array([r.labels.d_month for r in recs], dtype=np.float64),
    }
    return EventDataset([r.id for r in recs], columns, X, labels, groups, float(miss), diags)


@dataclass
class DisaggregatedReport:
    seed: int
    k: int
    cells: list  # CVReport
    skipped: list = field(default_factory=list)
    group_columns: dict = field(default_factory=dict)  # label -> columns actually used

    def cell(self, target, group):
        for c in self.cells:
            if c.target == target and c.feature_group == group:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "experiment": "disaggregated",
            "seed": self.seed,
            "k": self.k,
            "selection_metric": f"{self.k}-fold CV LogLoss",
            "cells": [c.to_dict() for c in self.cells],
            "skipped": self.skipped,
            "group_columns": self.group_columns,
        }


def _classifier(model_id, cfg, seed):
    if model_id == "gp":
        return gp_classifier_trainer(cfg["gp"], seed)
    return ensemble_trainer(model_id, "classification", cfg, seed)


def run_disaggregated(data: EventDataset, groups=None, config: dict | None = None, seed: int | None = None):
    cfg_all = config if config is not None else make_config()
    cfg = cfg_all["disaggregated"]
    seed = cfg_all.get("seed", 0) if seed is None else seed
    k = int(cfg.get("k", 10))
    stratified = bool(cfg.get("stratified", True))
    models = [m for m in MODEL_IDS if m in cfg.get("models", MODEL_IDS)]
    if groups is None:
        wanted = cfg.get("groups", list(GROUP_LABELS))
        groups = [data.groups[g] for g in GROUP_LABELS if g in wanted]
    skipped = []
    if data.victim_missing_rate > cfg.get("max_victim_missing", 0.5):
        log.warning("victim fields %.0f%% missing: skipping group v", 100 * data.victim_missing_rate)
        skipped.append({"group": "v", "reason": f"victim fields {data.victim_missing_rate:.3f} missing"})
        v_cols = set(data.groups["v"].columns)
        kept = []
        for g in groups:
            if g.label == "v":
                continue
            if g.label == "czxv":
                g = FeatureGroupSpec("czxv", tuple(c for c in g.columns if c not in v_cols))
            kept.append(g)
        groups = kept

    cells = []
    for target in cfg["targets"]:
        y = data.labels[target]
        if len(np.unique(y)) < 2:
            raise PipelineError(f"target {target} has a single class")
        for spec in groups:
            X = data.matrix(spec)
            candidates = {}
            fold_record = None
            for model_id in models:
                preds, folds = kfold_cv(_classifier(model_id, cfg, seed), X, y, k, seed, stratified)
                candidates[model_id] = classification_metrics(y, preds)
                fold_record = folds
            winner = min(models, key=lambda m: candidates[m]["LogLoss"])
            confirmation = {}
            if cfg.get("confirm", True):
                preds, _ = kfold_cv(_classifier(winner, cfg, seed), X, y, k, seed + 1, stratified)
                confirmation = {"seed": seed + 1, **classification_metrics(y, preds)}
            cells.append(
                CVReport(
                    target=target,
                    feature_group=spec.label,
                    model_id=winner,
                    metrics=dict(candidates[winner]),
                    fold_assignments=[int(f) for f in fold_record],
                    seed=seed,
                    candidates=candidates,
                    confirmation=confirmation,
                    selection_metric=f"{k}-fold CV LogLoss",
                )
            )
    return DisaggregatedReport(seed, k, cells, skipped, {g.label: list(g.columns) for g in groups})


# variable importance --------------------------------------------------------


def rank_importances(names, importances):
    """Descending table; equal importances share the better rank."""
    imp = np.asarray(importances, dtype=np.float64)
    order = sorted(range(len(names)), key=lambda j: (-imp[j], j))
    return [
        {"feature": names[j], "importance": float(imp[j]), "rank": int(1 + np.sum(imp > imp[j]))} for j in order
    ]


def fit_full(model_id, task, X, y, cfg, seed):
    """Fit one ensemble on median-imputed ``X``; returns ``(model, imputer)``."""
    imp = MedianImputer().fit(X)
    Xf = imp.transform(X)
    if model_id == "rf":
        return fit_random_forest(Xf, y, _forest_params(cfg["forest"], seed), task=task), imp
    return fit_gradient_boosting(Xf, y, _boosting_params(cfg["boosting"], seed), task=task), imp


def heldout_importance(model_id, task, X, y, cfg, seed, metric, n_repeats, k, stratified=False):
    """Permutation importance scored on held-out folds.

    The model is refit on each training split and its held-out rows are
    permuted, so features a model merely memorized do not look important.
    Returns the mean over folds and the ``(k * n_repeats, p)`` raw draws.
    """
    k = min(int(k), len(y))
    folds = fold_assignments(y, k, seed, stratified)
    imps, raws = [], []
    for f in range(k):
        tr, te = folds != f, folds == f
        model, imp = fit_full(model_id, task, X[tr], y[tr], cfg, seed)
        i, r = permutation_importance(model, imp.transform(X[te]), y[te], metric, n_repeats, seed, return_raw=True)
        imps.append(i)
        raws.append(r)
    return np.mean(imps, axis=0), np.vstack(raws)


def importance_report(report, data, config: dict | None = None, seed: int | None = None) -> list[dict]:
    """Permutation importance tables for every cell won by a tree ensemble.

    ``report``/``data`` are either an :class:`AggregatedReport` with its
    area list or a :class:`DisaggregatedReport` with its
    :class:`EventDataset`. GP winners produce a note instead of a table.
    """
    cfg_all = config if config is not None else make_config()
    out = []
    if isinstance(report, AggregatedReport):
        cfg = cfg_all["aggregated"]
        seed = report.seed if seed is None else seed
        usable, cols, X, _ = area_matrix(data, report.feature_columns)
        for target, res in report.targets.items():
            y = np.array([getattr(a, target) for a in usable], dtype=np.float64)
            model_id = res["step1"]["model_id"]
            imp, raw = heldout_importance(
                model_id, "regression", X, y, cfg, seed, "MSE",
                cfg.get("importance_repeats", 10), cfg.get("importance_folds", 5),
            )
            out.append(_importance_entry(target, "x", model_id, cols, imp, raw, "MSE"))
        return out

    cfg = cfg_all["disaggregated"]
    seed = report.seed if seed is None else seed
    groups = dict(data.groups)
    for cell in report.cells:
        if cell.model_id == "gp":
            out.append(
                {"target": cell.target, "feature_group": cell.feature_group, "model_id": "gp",
                 "note": "winner is a GP classifier; no permutation importance table", "table": []}
            )
            continue
        cols = report.group_columns.get(cell.feature_group)
        spec = FeatureGroupSpec(cell.feature_group, tuple(cols)) if cols else groups[cell.feature_group]
        y = data.labels[cell.target]
        imp, raw = heldout_importance(
            cell.model_id, "classification", data.matrix(spec), y, cfg, seed, "LogLoss",
            cfg.get("importance_repeats", 5), cfg.get("importance_folds", 5), cfg.get("stratified", True),
        )
        out.append(_importance_entry(cell.target, cell.feature_group, cell.model_id, list(spec.columns), imp, raw, "LogLoss"))
    return out


def _importance_entry(target, group, model_id, names, imp, raw, metric):
    noise = float(np.std(raw, axis=0, ddof=1).max()) if raw.shape[0] > 1 else 0.0
    return {
        "target": target,
        "feature_group": group,
        "model_id": model_id,
        "metric": metric,
        "noise_floor": noise,
        "table": rank_importances(names, imp),
    }


# area construction ----------------------------------------------------------


def build_areas(records, areas, feature_table, membership, population_column="population"):
    """Attach event proportions and population-weighted tract features to areas.

    Events with a point are located by point-in-polygon, otherwise by their
    area id. Returns ``(areas, diagnostics)``; areas keep ``m = 0`` and NaN
    proportions when no event falls inside them.
    """
    diags = []
    by_area = defaultdict(list)
    ids = {a.area_id for a in areas}
    pts = [(i, r.point) for i, r in enumerate(records) if r.point is not None]
    located = dict(zip((i for i, _ in pts), assign_points([p for _, p in pts], areas)))
    for i, r in enumerate(records):
        aid = located.get(i) if r.point is not None else r.area_id
        if aid is None or aid not in ids:
            diags.append(RejectDiagnostic(i, f"record {r.id}: outside every area"))
            continue
        by_area[aid].append(r.labels)
    props = compute_proportions({a.area_id: by_area.get(a.area_id, []) for a in areas})

    district_ids = [a.area_id for a in areas]
    feat_cols = [c for c in feature_table.columns if c != population_column]
    pops = feature_table.column(population_column)
    values = feature_table.select(feat_cols).values
    agg = population_weighted_aggregate(feature_table.keys, values, pops, membership, district_ids)
    pop_agg = np.zeros(len(district_ids))
    dpos = {d: i for i, d in enumerate(district_ids)}
    for t, tid in enumerate(feature_table.keys):
        for d, f in membership.get(tid, {}).items():
            if d in dpos:
                pop_agg[dpos[d]] += pops[t] * f

    out = []
    for j, a in enumerate(areas):
        p_day, p_month, m = props[a.area_id]
        out.append(
            AreaUnit(
                area_id=a.area_id,
                geometry=a.geometry,
                population=float(pop_agg[j]),
                features={c: float(agg[j, k]) for k, c in enumerate(feat_cols)},
                p_day=p_day,
                p_month=p_month,
                m=m,
            )
        )
    return out, diags
