import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaylens.fixture import two_cluster_grid
from delaylens.geo import SpatialWeights, build_queen_weights
from delaylens.moran import (
    DegenerateInputWarning,
    classify_quadrants,
    global_morans_i,
    local_morans_i,
    permutation_pseudo_p,
)


def textbook(p, W):
    n = len(p)
    pbar = sum(p) / n
    m2 = sum((x - pbar) ** 2 for x in p) / (n - 1)
    return [(p[j] - pbar) / m2 * sum(W[j][k] * (p[k] - pbar) for k in range(n) if k != j) for j in range(n)]


def literal(p, W):
    n = len(p)
    pbar = sum(p) / n
    out = []
    for j in range(n):
        den = sum(W[j][k] * (p[k] - pbar) ** 2 for k in range(n) if k != j)
        num = sum(W[j][k] * (p[k] - pbar) for k in range(n) if k != j)
        out.append(0.0 if den == 0 else (n - 1) * (p[j] - pbar) / den * num)
    return out


def random_instance(r):
    n = int(r.integers(2, 31))
    A = (r.random((n, n)) < 0.3).astype(float)
    W = np.triu(A, 1)
    W = W + W.T
    return r.random(n), W


def path(n):
    W = np.zeros((n, n))
    for i in range(n - 1):
        W[i, i + 1] = W[i + 1, i] = 1
    return W


def test_oracles_on_random_instances(rng):
    for _ in range(50):
        p, W = random_instance(rng)
        np.testing.assert_allclose(local_morans_i(p, W, "standard"), textbook(p, W), rtol=0, atol=1e-12)
        np.testing.assert_allclose(local_morans_i(p, W, "paper-literal"), literal(p, W), rtol=0, atol=1e-12)


def test_constant_vector_warns():
    with pytest.warns(DegenerateInputWarning):
        assert not local_morans_i([0.5] * 4, path(4)).any()


def test_path_examples():
    I = local_morans_i([1, 1, 0, 0], path(4))
    assert I[0] > 0 and I[3] > 0
    for mode in ("standard", "paper-literal"):
        I = local_morans_i([1, 0, 1, 0], path(4), mode)
        assert I[1] < 0 and I[2] < 0


def test_location_scale_invariance(rng):
    for _ in range(20):
        p, W = random_instance(rng)
        a, b = rng.uniform(-5, 5), rng.uniform(-5, 5)
        if abs(a) < 0.1:
            a = 1.7
        np.testing.assert_allclose(local_morans_i(a * p + b, W), local_morans_i(p, W), atol=1e-12)


def test_permutation_equivariance(rng):
    p, W = random_instance(rng)
    perm = rng.permutation(len(p))
    np.testing.assert_allclose(local_morans_i(p[perm], W[np.ix_(perm, perm)]), local_morans_i(p, W)[perm], atol=1e-12)


def test_sum_relates_to_global(rng):
    for _ in range(20):
        p, W = random_instance(rng)
        if W.sum() == 0:
            continue
        n = len(p)
        z = p - p.mean()
        brute = n / W.sum() * sum(W[i, j] * z[i] * z[j] for i in range(n) for j in range(n)) / (z @ z)
        assert global_morans_i(p, W) == pytest.approx(brute, abs=1e-12)
        assert local_morans_i(p, W).sum() == pytest.approx(brute * W.sum() * (n - 1) / n, abs=1e-10)


def test_quadrants():
    W = path(3)
    assert classify_quadrants([1.0, 0.9, 0.0], W)[0] == "HH"
    assert classify_quadrants([1.0, 0.0, 0.0], W)[0] == "HL"
    assert classify_quadrants([0.0, 1.0, 0.0], W)[1] == "HL"
    assert classify_quadrants([0.0, 1.0, 0.0], W)[0] == "LH"
    assert classify_quadrants([0.5, 0.0, 1.0], W)[0] == "undefined"


def test_pseudo_p_bounds_and_determinism(rng):
    for _ in range(10):
        p, W = random_instance(rng)
        res = permutation_pseudo_p(p, W, 99, seed=3)
        assert np.all(res.pseudo_p >= 1 / 100) and np.all(res.pseudo_p <= 1)
        again = permutation_pseudo_p(p, W, 99, seed=3)
        assert np.array_equal(res.pseudo_p, again.pseudo_p) and res.quadrant == again.quadrant


def test_pseudo_p_constant_and_isolated():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        res = permutation_pseudo_p([0.3] * 5, path(5), 99, 0)
    assert np.all(res.pseudo_p == 1)
    W = path(4)
    W[3, 2] = W[2, 3] = 0
    res = permutation_pseudo_p([0.1, 0.9, 0.4, 0.7], W, 99, 0)
    assert res.pseudo_p[3] == 1 and res.quadrant[3] == "undefined"


def test_too_few_permutations():
    with pytest.raises(ValueError):
        permutation_pseudo_p([0.1, 0.2, 0.3], path(3), 50, 0)


def test_two_cluster_cores_significant():
    areas, cores = two_cluster_grid()
    areas = sorted(areas, key=lambda a: a.area_id)
    W = build_queen_weights(areas)
    res = permutation_pseudo_p([a.p_day for a in areas], W, 999, seed=7)
    ids = [a.area_id for a in areas]
    core_p = [res.pseudo_p[ids.index(c)] for c in cores]
    # cells outside both blocks: rows 0-2, columns 3-4
    background = [res.pseudo_p[ids.index(f"G{r}{c}")] for r in range(3) for c in (3, 4)]
    assert max(core_p) <= 0.05
    assert np.median(background) >= 0.2


def test_accepts_spatial_weights_object():
    W = path(4)
    sw = SpatialWeights.from_dense(W.astype(int))
    np.testing.assert_array_equal(local_morans_i([1, 2, 3, 5], sw), local_morans_i([1, 2, 3, 5], W))


@pytest.mark.filterwarnings("ignore::delaylens.moran.DegenerateInputWarning")
@given(st.lists(st.floats(0, 1), min_size=3, max_size=12), st.integers(0, 1000))
def test_pseudo_p_bounds_property(vals, seed):
    n = len(vals)
    res = permutation_pseudo_p(vals, path(n), 99, seed) if np.ptp(vals) > 0 else None
    if res is not None:
        assert np.all((res.pseudo_p >= 0.01) & (res.pseudo_p <= 1))
