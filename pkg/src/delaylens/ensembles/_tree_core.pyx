# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CART induction and traversal.

Samples are presorted once per feature and stably partitioned at every
split, so each node sees its samples in (value, position) order without
re-sorting. The arithmetic matches ``_tree_py`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t
from libc.math cimport INFINITY

cnp.import_array()


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef struct Builder:
    const double* X
    const double* y
    Py_ssize_t n
    Py_ssize_t p
    int max_depth
    Py_ssize_t min_leaf
    Py_ssize_t max_features
    uint64_t rng
    Py_ssize_t* sorted_idx      # (p + 1) x n; row p holds positions ascending
    Py_ssize_t* buf
    char* go_left
    Py_ssize_t* feat_perm
    Py_ssize_t* chosen
    # output
    int64_t* feature
    double* threshold
    int64_t* left
    int64_t* right
    double* value
    int64_t* counts
    Py_ssize_t n_nodes


cdef void _draw(Builder* b) noexcept nogil:
    cdef Py_ssize_t i, j, t, k = b.max_features, p = b.p
    if k >= p:
        for i in range(p):
            b.chosen[i] = i
        return
    for i in range(p):
        b.feat_perm[i] = i
    for i in range(k):
        j = i + <Py_ssize_t>(_next(&b.rng) % <uint64_t>(p - i))
        t = b.feat_perm[i]
        b.feat_perm[i] = b.feat_perm[j]
        b.feat_perm[j] = t
    # insertion sort of the k chosen features
    for i in range(k):
        b.chosen[i] = b.feat_perm[i]
    for i in range(1, k):
        t = b.chosen[i]
        j = i - 1
        while j >= 0 and b.chosen[j] > t:
            b.chosen[j + 1] = b.chosen[j]
            j -= 1
        b.chosen[j + 1] = t


cdef Py_ssize_t _grow(Builder* b, Py_ssize_t start, Py_ssize_t end, int depth) noexcept nogil:
    cdef Py_ssize_t node = b.n_nodes
    cdef Py_ssize_t m = end - start
    cdef Py_ssize_t i, fi, f, pos, k, nl_i, best_nl = 0, best_f = -1, r, wl, wr
    cdef Py_ssize_t* seg
    cdef Py_ssize_t* pos_row = b.sorted_idx + b.p * b.n
    cdef double total = 0.0, sumsq = 0.0, yv, ymin, ymax
    cdef double parent_score, best_score = -INFINITY, best_thr = 0.0
    cdef double sl, sr, nl, nr, score, a, c, mid
    cdef Py_ssize_t n_feat

    b.n_nodes += 1
    b.feature[node] = -1
    b.threshold[node] = 0.0
    b.left[node] = -1
    b.right[node] = -1
    b.counts[node] = m

    ymin = b.y[pos_row[start]]
    ymax = ymin
    for i in range(start, end):
        yv = b.y[pos_row[i]]
        total += yv
        if yv < ymin:
            ymin = yv
        if yv > ymax:
            ymax = yv
    b.value[node] = total / m

    if b.max_depth >= 0 and depth >= b.max_depth:
        return node
    if m < 2 * b.min_leaf or ymin == ymax:
        return node

    for i in range(start, end):
        yv = b.y[pos_row[i]]
        sumsq += yv * yv
    parent_score = total * total / m

    _draw(b)
    n_feat = b.max_features if b.max_features < b.p else b.p
    for fi in range(n_feat):
        f = b.chosen[fi]
        seg = b.sorted_idx + f * b.n
        sl = 0.0
        for i in range(start, end - 1):
            pos = seg[i]
            sl += b.y[pos]
            nl_i = i - start + 1
            if nl_i < b.min_leaf or m - nl_i < b.min_leaf:
                continue
            a = b.X[pos * b.p + f]
            c = b.X[seg[i + 1] * b.p + f]
            if not (a < c):
                continue
            nl = <double>nl_i
            nr = <double>(m - nl_i)
            sr = total - sl
            score = sl * sl / nl + sr * sr / nr
            if score > best_score:
                mid = 0.5 * (a + c)
                if not (a < mid and mid < c):
                    mid = a
                best_score = score
                best_f = f
                best_thr = mid
                best_nl = nl_i

    if best_f < 0 or not (best_score - parent_score > 1e-12 * sumsq):
        return node

    seg = b.sorted_idx + best_f * b.n
    for i in range(start, end):
        b.go_left[seg[i]] = 1 if i - start < best_nl else 0

    for f in range(b.p + 1):
        seg = b.sorted_idx + f * b.n
        wl = start
        wr = 0
        for i in range(start, end):
            pos = seg[i]
            if b.go_left[pos]:
                seg[wl] = pos
                wl += 1
            else:
                b.buf[wr] = pos
                wr += 1
        for i in range(wr):
            seg[wl + i] = b.buf[i]

    b.feature[node] = best_f
    b.threshold[node] = best_thr
    b.left[node] = _grow(b, start, start + best_nl, depth + 1)
    b.right[node] = _grow(b, start + best_nl, end, depth + 1)
    return node


def build_tree(X, y, int max_depth, Py_ssize_t min_samples_leaf, Py_ssize_t max_features, seed, order=None):
    """Grow a CART tree on ``(X, y)``; see ``delaylens.ensembles.tree``.

    ``order`` optionally supplies the ``(p, n)`` stable per-feature sort
    permutation so ensembles can reuse it across trees.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] yc = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = Xc.shape[0], p = Xc.shape[1], f
    cdef Py_ssize_t cap = 2 * n + 1

    sorted_idx = np.empty((p + 1, n), dtype=np.intp)
    if order is None:
        sorted_idx[:p] = np.argsort(Xc, axis=0, kind="stable").T
    else:
        sorted_idx[:p] = order
    sorted_idx[p] = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[:, ::1] sv = sorted_idx
    buf = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] bufv = buf
    go_left = np.zeros(max(n, 1), dtype=np.int8)
    cdef char[::1] glv = go_left
    perm = np.empty(max(p, 1), dtype=np.intp)
    chosen = np.empty(max(p, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] pv = perm
    cdef Py_ssize_t[::1] cv = chosen

    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty(cap, dtype=np.float64)
    counts = np.empty(cap, dtype=np.int64)
    cdef int64_t[::1] fv = feature
    cdef double[::1] tv = threshold
    cdef int64_t[::1] lv = left
    cdef int64_t[::1] rv = right
    cdef double[::1] vv = value
    cdef int64_t[::1] nv = counts

    cdef Builder b
    b.X = &Xc[0, 0] if n > 0 and p > 0 else NULL
    b.y = &yc[0] if n > 0 else NULL
    b.n = n
    b.p = p
    b.max_depth = max_depth
    b.min_leaf = min_samples_leaf if min_samples_leaf > 0 else 1
    b.max_features = max_features
    b.rng = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    b.sorted_idx = &sv[0, 0]
    b.buf = &bufv[0]
    b.go_left = &glv[0]
    b.feat_perm = &pv[0]
    b.chosen = &cv[0]
    b.feature = &fv[0]
    b.threshold = &tv[0]
    b.left = &lv[0]
    b.right = &rv[0]
    b.value = &vv[0]
    b.counts = &nv[0]
    b.n_nodes = 0

    with nogil:
        _grow(&b, 0, n, 0)

    k = b.n_nodes
    return {
        "feature": feature[:k].copy(),
        "threshold": threshold[:k].copy(),
        "left": left[:k].copy(),
        "right": right[:k].copy(),
        "value": value[:k].copy(),
        "n_samples": counts[:k].copy(),
    }


def apply_tree(const int64_t[::1] feature, const double[::1] threshold,
               const int64_t[::1] left, const int64_t[::1] right, X):
    """Return the leaf index reached by every row of ``X``."""
    cdef const double[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xc.shape[0], i
    cdef int64_t node
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] ov = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if Xc[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            ov[i] = node
    return out
