"""Single CART trees: fitting, traversal and (de)serialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend


@dataclass(frozen=True)
class TreeParams:
    """Hyperparameters shared by trees, forests and boosting.

    ``max_depth=None`` grows until leaves are pure or too small.
    ``feature_subsample=None`` means ``sqrt(p)/p`` for forests and ``1`` for
    boosting.
    """

    max_depth: int | None = None
    min_samples_leaf: int = 5
    n_trees: int = 500
    learning_rate: float = 0.05
    feature_subsample: float | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.feature_subsample is not None and not 0.0 < self.feature_subsample <= 1.0:
            raise ValueError("feature_subsample must lie in (0, 1]")

    @classmethod
    def forest_defaults(cls, **overrides) -> "TreeParams":
        return cls(**{"n_trees": 500, "min_samples_leaf": 5, "max_depth": None, **overrides})

    @classmethod
    def boosting_defaults(cls, **overrides) -> "TreeParams":
        return cls(
            **{
                "n_trees": 300,
                "max_depth": 3,
                "learning_rate": 0.05,
                "min_samples_leaf": 5,
                "bootstrap": False,
                **overrides,
            }
        )

    def n_split_features(self, p: int, default_fraction: float | None = None) -> int:
        frac = self.feature_subsample
        if frac is None:
            frac = default_fraction if default_fraction is not None else 1.0
        return max(1, min(p, int(round(frac * p))))

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "n_trees": self.n_trees,
            "learning_rate": self.learning_rate,
            "feature_subsample": self.feature_subsample,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }


@dataclass
class Tree:
    """Fitted binary tree in flat-array form; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray = field(default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        _, apply_tree = _backend.kernels()
        return apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "value": float(self.value[i]),
                }
                for i in range(self.n_nodes)
            ]
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Tree":
        nodes = payload["nodes"]
        return cls(
            feature=np.array([nd["feature"] for nd in nodes], dtype=np.int64),
            threshold=np.array([nd["threshold"] for nd in nodes], dtype=np.float64),
            left=np.array([nd["left"] for nd in nodes], dtype=np.int64),
            right=np.array([nd["right"] for nd in nodes], dtype=np.int64),
            value=np.array([nd["value"] for nd in nodes], dtype=np.float64),
        )


def presort(X) -> np.ndarray:
    """``(p, n)`` stable per-feature sort permutation of ``X``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.intp)


def bootstrap_presort(order, counts) -> np.ndarray:
    """Sort permutation of ``X[np.repeat(arange(n), counts)]`` derived from ``presort(X)``.

    Repeated copies of a row are adjacent, so walking the parent order and
    emitting each row's positions reproduces the (value, position) order
    without sorting again.
    """
    counts = np.asarray(counts, dtype=np.intp)
    start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    out = np.empty((order.shape[0], int(counts.sum())), dtype=np.intp)
    for f in range(order.shape[0]):
        o = order[f][counts[order[f]] > 0]
        c = counts[o]
        firsts = np.repeat(start[o], c)
        offsets = np.arange(len(firsts)) - np.repeat(np.cumsum(c) - c, c)
        out[f] = firsts + offsets
    return out


def grow(X, y, max_depth, min_samples_leaf, max_features, seed, backend=None, check=True, order=None) -> Tree:
    """Low-level entry: grow one tree with an explicit split-feature budget."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if check:
        _validate(X, y)
    build_tree, _ = _backend.kernels(backend)
    depth = -1 if max_depth is None else int(max_depth)
    arrays = build_tree(X, y, depth, int(min_samples_leaf), int(max_features), int(seed), order)
    return Tree(**arrays)


def _validate(X, y):
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) and y (n,)")
    if X.shape[0] == 0:
        raise ValueError("cannot fit a tree on zero rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite; impute missing cells upstream")


def fit_tree(X, y, params: TreeParams | None = None, task: str = "regression", backend=None) -> Tree:
    """Fit a single CART tree.

    Splits maximise variance reduction; for 0/1 labels this is the same
    ordering as Gini impurity decrease, so one criterion serves both tasks
    and classification leaves hold the positive-class frequency.
    """
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    params = params or TreeParams()
    X = np.asarray(X, dtype=np.float64)
    if task == "classification" and not np.isin(np.asarray(y), (0, 1)).all():
        raise ValueError("classification targets must be 0/1")
    k = params.n_split_features(X.shape[1], 1.0)
    return grow(X, y, params.max_depth, params.min_samples_leaf, k, params.seed, backend)
