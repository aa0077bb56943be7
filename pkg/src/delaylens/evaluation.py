"""Cross-validation engines and the regression/classification metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._parallel import pmap

log = logging.getLogger(__name__)

PROB_EPS = 1e-6


class CVError(RuntimeError):
    """A trainer failed on one fold."""


# metrics --------------------------------------------------------------------


def mse(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    return float(np.mean((y - yhat) ** 2))


def r2(y, yhat) -> float | None:
    """Coefficient of determination; ``None`` (with a warning) for constant ``y``."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        log.warning("R2 undefined for a constant target")
        return None
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def log_loss(y, p) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def auc(y, score) -> float | None:
    """Mann-Whitney AUC with midranks for ties; ``None`` if only one class is present."""
    y = np.asarray(y)
    score = np.asarray(score, dtype=np.float64)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        log.warning("AUC undefined with a single class")
        return None
    ranks = rankdata(score, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def regression_metrics(y, yhat) -> dict:
    if len(y) != len(yhat) or len(y) < 2:
        raise ValueError("need equal-length vectors with at least 2 entries")
    return {"MSE": mse(y, yhat), "R2": r2(y, yhat)}


def classification_metrics(y, p) -> dict:
    if len(y) != len(p):
        raise ValueError("labels and scores differ in length")
    return {"LogLoss": log_loss(y, p), "AUC": auc(y, p)}


METRICS = {"MSE": mse, "R2": r2, "LogLoss": log_loss, "AUC": auc}
# +1: larger is better, -1: smaller is better
METRIC_DIRECTION = {"MSE": -1, "R2": 1, "LogLoss": -1, "AUC": 1}


# cross-validation -----------------------------------------------------------


def _run_folds(fit_predict, X, y, test_sets):
    X = np.asarray(X)
    y = np.asarray(y)
    preds = np.empty(len(y), dtype=np.float64)

    def one(item):
        fold, test = item
        train = np.setdiff1d(np.arange(len(y)), test)
        try:
            out = np.asarray(fit_predict(X[train], y[train], X[test]), dtype=np.float64)
        except Exception as exc:
            raise CVError(f"trainer failed on fold {fold}: {exc}") from exc
        if out.shape != (len(test),):
            raise CVError(f"fold {fold}: trainer returned shape {out.shape}, expected ({len(test)},)")
        return test, out

    for test, out in pmap(one, enumerate(test_sets)):
        preds[test] = out
    return preds


def loo_cv(fit_predict, X, y) -> np.ndarray:
    """Leave-one-out predictions: entry ``i`` comes from a model trained without row ``i``.

    ``fit_predict(X_train, y_train, X_test)`` must return one prediction per
    test row. Training rows are always passed in ascending row order.
    """
    n = len(y)
    if n < 2:
        raise ValueError("LOO-CV needs at least 2 rows")
    return _run_folds(fit_predict, X, y, [np.array([i]) for i in range(n)])


def fold_assignments(y, k: int, seed: int, stratified: bool = False) -> np.ndarray:
    """Seeded fold index per row; fold sizes (and per-class counts) differ by at most one."""
    y = np.asarray(y)
    n = len(y)
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if not stratified:
        perm = rng.permutation(n)
        folds[perm] = np.arange(n) % k
        return folds
    offset = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        folds[members] = (offset + np.arange(len(members))) % k
        offset += len(members)
    for fold in range(k):
        train_classes = np.unique(y[folds != fold])
        if len(train_classes) < len(np.unique(y)):
            raise ValueError(f"stratified fold {fold}: a class is absent from its training split")
    return folds


def kfold_cv(fit_predict, X, y, k: int, seed: int, stratified: bool = False):
    """K-fold out-of-fold predictions; returns ``(predictions, fold_assignments)``."""
    folds = fold_assignments(y, k, seed, stratified)
    preds = _run_folds(fit_predict, X, y, [np.flatnonzero(folds == f) for f in range(k)])
    return preds, folds


@dataclass
class CVReport:
    """Out-of-fold metrics for one (target, feature group) cell."""

    target: str
    feature_group: str
    model_id: str
    metrics: dict
    fold_assignments: list = field(default_factory=list)
    seed: int = 0
    candidates: dict = field(default_factory=dict)
    confirmation: dict = field(default_factory=dict)
    selection_metric: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        row = {"target": self.target, "feature_group": self.feature_group, "model_id": self.model_id}
        for key in ("MSE", "R2", "LogLoss", "AUC"):
            if key in self.metrics:
                row[key] = self.metrics[key]
        return row
