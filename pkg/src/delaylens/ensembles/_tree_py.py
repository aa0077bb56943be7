"""Pure-numpy tree induction, used when the compiled core is unavailable.

Mirrors ``_tree_core.pyx`` operation for operation: samples inside a node
are visited in (value, position) order, sums are accumulated sequentially
and the split score is evaluated with the same floating point expression,
so both backends grow bit-identical trees.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny 64-bit generator shared (bit for bit) with the compiled core."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def bounded(self, m):
        return self.next() % m


def _draw_features(rng, p, k):
    if k >= p:
        return list(range(p))
    perm = list(range(p))
    for i in range(k):
        j = i + rng.bounded(p - i)
        perm[i], perm[j] = perm[j], perm[i]
    return sorted(perm[:k])


def build_tree(X, y, max_depth, min_samples_leaf, max_features, seed, order=None):
    """Grow a CART tree on ``(X, y)``; see ``delaylens.ensembles.tree``.

    ``order`` is accepted for signature parity with the compiled core; this
    kernel sorts node samples directly.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    rng = SplitMix64(seed)
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        ys = y[idx]
        m = len(idx)
        total = np.cumsum(ys)[-1]
        value.append(total / m)
        counts.append(m)

        if max_depth >= 0 and depth >= max_depth:
            return node
        if m < 2 * min_samples_leaf or ys.min() == ys.max():
            return node

        sumsq = np.cumsum(ys * ys)[-1]
        parent_score = total * total / m
        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        best_nl = 0
        for f in _draw_features(rng, p, max_features):
            order = idx[np.argsort(X[idx, f], kind="stable")]
            xs = X[order, f]
            cs = np.cumsum(y[order])[:-1]
            nl = np.arange(1, m, dtype=np.float64)
            nr = m - nl
            ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf) & (xs[:-1] < xs[1:])
            if not ok.any():
                continue
            sr = total - cs
            scores = cs * cs / nl + sr * sr / nr
            scores[~ok] = -np.inf
            i = int(np.argmax(scores))
            if scores[i] > best_score:
                a, b = xs[i], xs[i + 1]
                mid = 0.5 * (a + b)
                if not (a < mid < b):
                    mid = a
                best_score = scores[i]
                best_f = f
                best_thr = mid
                best_nl = i + 1

        if best_f < 0 or not (best_score - parent_score > 1e-12 * sumsq):
            return node

        go_left = X[idx, best_f] <= best_thr
        assert int(go_left.sum()) == best_nl
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(n, dtype=np.intp), 0)
    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.float64),
        "n_samples": np.asarray(counts, dtype=np.int64),
    }


def apply_tree(feature, threshold, left, right, X):
    """Return the leaf index reached by every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node
