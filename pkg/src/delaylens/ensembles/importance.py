"""Permutation variable importance."""

import numpy as np

from ..evaluation import METRIC_DIRECTION, METRICS


def permutation_importance(model, X, y, metric="MSE", n_repeats=10, seed=0, return_raw=False):
    """Mean metric degradation when one column is shuffled.

    Oriented so that larger means more important for every metric. The
    shuffles come from one ``default_rng(seed)`` stream consumed repeat by
    repeat, feature by feature, so the first ``r`` repeats are identical
    whatever ``n_repeats`` is.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {sorted(METRICS)}")
    score = METRICS[metric]
    sign = METRIC_DIRECTION[metric]
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    baseline = score(y, model.predict(X))
    rng = np.random.default_rng(seed)
    n, p = X.shape
    raw = np.zeros((n_repeats, p))
    for r in range(n_repeats):
        for j in range(p):
            perm = rng.permutation(n)
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            permuted = score(y, model.predict(Xp))
            raw[r, j] = sign * (baseline - permuted)
    importances = raw.mean(axis=0)
    if return_raw:
        return importances, raw
    return importances
