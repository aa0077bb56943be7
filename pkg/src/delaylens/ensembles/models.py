"""Random forests and gradient boosting built on the CART kernels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _backend
from .tree import Tree, TreeParams, _validate, bootstrap_presort, grow, presort

PROB_EPS = 1e-6
SCHEMA_VERSION = 1


@dataclass
class EnsembleModel:
    """A fitted tree ensemble.

    ``kind`` is ``"forest"`` (prediction = mean of tree outputs) or
    ``"boosting"`` (prediction = base score + learning rate * sum of tree
    outputs, passed through a sigmoid for classification).
    """

    task: str
    kind: str
    trees: list[Tree]
    feature_names: list[str]
    base_score: float = 0.0
    learning_rate: float = 1.0
    params: TreeParams = field(default_factory=TreeParams)
    training_metadata: dict = field(default_factory=dict)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(self.feature_names))
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} columns {self.feature_names}, got shape {X.shape}"
            )
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        if X.shape[0] == 0:
            return np.zeros(0)
        if self.kind == "forest":
            # mean as offsets from the first tree: exact when all trees agree
            ref = self.trees[0].predict(X)
            acc = np.zeros(X.shape[0])
            for tree in self.trees[1:]:
                acc += tree.predict(X) - ref
            return ref + acc / len(self.trees)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        """Regression values, or positive-class probabilities in [1e-6, 1 - 1e-6]."""
        raw = self.decision_function(X)
        if self.task == "regression":
            return raw
        if self.kind == "boosting":
            raw = expit(raw)
        return np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)

    def to_dict(self) -> dict:
        return {
            "schema": "delaylens.ensemble",
            "version": SCHEMA_VERSION,
            "task": self.task,
            "kind": self.kind,
            "feature_names": list(self.feature_names),
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "params": self.params.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "EnsembleModel":
        if payload.get("schema") != "delaylens.ensemble" or payload.get("version") != SCHEMA_VERSION:
            raise ValueError("not a delaylens ensemble document (or unsupported version)")
        return cls(
            task=payload["task"],
            kind=payload["kind"],
            trees=[Tree.from_dict(t) for t in payload["trees"]],
            feature_names=list(payload["feature_names"]),
            base_score=payload["base_score"],
            learning_rate=payload["learning_rate"],
            params=TreeParams(**payload["params"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        return cls.from_dict(json.loads(text))


def predict(model: EnsembleModel, X) -> np.ndarray:
    return model.predict(X)


def _prepare(X, y, task, feature_names, row_ids):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, p) and y (n,)")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    if task == "classification" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("classification targets must be 0/1")
    _validate(X, y)
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    if row_ids is not None:
        # canonical order so resampling does not depend on input row order
        order = np.argsort(np.asarray(row_ids), kind="stable")
        X, y = X[order], y[order]
    return X, y, list(feature_names)


def fit_random_forest(
    X,
    y,
    params: TreeParams | None = None,
    task: str = "regression",
    feature_names=None,
    row_ids=None,
) -> EnsembleModel:
    """Bagged CART trees with per-split feature subsampling.

    Tree ``t`` draws its bootstrap sample and split-feature stream from
    ``default_rng([seed, t])``, so results are reproducible and independent
    of how trees are scheduled.
    """
    params = params or TreeParams.forest_defaults()
    if params.n_trees == 0:
        raise ValueError("a forest needs n_trees >= 1")
    X, y, names = _prepare(X, y, task, feature_names, row_ids)
    n, p = X.shape
    k = params.n_split_features(p, np.sqrt(p) / p)
    order = presort(X)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([params.seed, t])
        if params.bootstrap:
            # drawn rows are kept in index order; the multiset is what matters
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
            rows = np.repeat(np.arange(n), counts)
            Xb, yb, ob = X[rows], y[rows], bootstrap_presort(order, counts)
        else:
            Xb, yb, ob = X, y, order
        tree_seed = int(rng.integers(0, 2**63 - 1))
        trees.append(grow(Xb, yb, params.max_depth, params.min_samples_leaf, k, tree_seed, check=False, order=ob))
    return EnsembleModel(
        task=task,
        kind="forest",
        trees=trees,
        feature_names=names,
        params=params,
        training_metadata={"backend": _backend.BACKEND, "n_rows": n, "split_features": k},
    )


def _logloss_from_scores(y, F):
    return float(np.mean(np.logaddexp(0.0, F) - y * F))


def fit_gradient_boosting(
    X,
    y,
    params: TreeParams | None = None,
    task: str = "regression",
    feature_names=None,
    row_ids=None,
) -> EnsembleModel:
    """Stagewise boosting of shallow regression trees on negative gradients.

    Regression uses squared error (leaves hold mean residuals).
    Classification uses logistic loss with one Newton step per leaf,
    ``sum(y - p) / sum(p (1 - p))``. If a step would raise the training
    loss it is halved until it does not, which keeps the loss history
    monotone.
    """
    params = params or TreeParams.boosting_defaults()
    if params.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    X, y, names = _prepare(X, y, task, feature_names, row_ids)
    n, p = X.shape
    k = params.n_split_features(p, 1.0)
    lr = params.learning_rate
    rng = np.random.default_rng(params.seed)

    if task == "regression":
        base = float(np.mean(y))
        F = np.full(n, base)
        history = [float(np.mean((y - F) ** 2))]
    else:
        prior = float(np.clip(np.mean(y), PROB_EPS, 1 - PROB_EPS))
        base = float(np.log(prior / (1 - prior)))
        F = np.full(n, base)
        history = [_logloss_from_scores(y, F)]

    order = presort(X)
    trees = []
    for _ in range(params.n_trees):
        tree_seed = int(rng.integers(0, 2**63 - 1))
        if task == "regression":
            resid = y - F
            tree = grow(X, resid, params.max_depth, params.min_samples_leaf, k, tree_seed, check=False, order=order)
            F = F + lr * tree.predict(X)
            history.append(float(np.mean((y - F) ** 2)))
        else:
            prob = expit(F)
            grad = y - prob
            hess = prob * (1 - prob)
            tree = grow(X, grad, params.max_depth, params.min_samples_leaf, k, tree_seed, check=False, order=order)
            leaves = tree.apply(X)
            m = tree.n_nodes
            num = np.bincount(leaves, weights=grad, minlength=m)
            den = np.bincount(leaves, weights=hess, minlength=m)
            values = num / np.maximum(den, 1e-12)
            old = history[-1]
            for _halving in range(50):
                F_new = F + lr * values[leaves]
                new = _logloss_from_scores(y, F_new)
                if new <= old:
                    break
                values = 0.5 * values
            else:
                values = np.zeros(m)
                F_new, new = F, old
            tree.value = values
            F = F_new
            history.append(new)
        trees.append(tree)

    return EnsembleModel(
        task=task,
        kind="boosting",
        trees=trees,
        feature_names=names,
        base_score=base,
        learning_rate=lr,
        params=params,
        training_metadata={"backend": _backend.BACKEND, "n_rows": n, "train_loss": history},
    )
