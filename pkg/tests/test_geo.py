import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Polygon, box

from delaylens.fixture import grid_areas
from delaylens.geo import (
    AreaUnit,
    GeometryError,
    SpatialWeights,
    assign_point_to_area,
    build_queen_weights,
    compute_proportions,
    dumps_geojson,
    feature_collection,
    membership_by_centroid,
    membership_by_overlap,
    population_weighted_aggregate,
    read_areas,
    read_crosswalk,
)
from delaylens.ingest import binarize_delay


def sq(aid, x, y, s=1.0):
    return AreaUnit(aid, box(x, y, x + s, y + s))


def test_queen_2x2_is_complete():
    W = build_queen_weights([sq("a", 0, 0), sq("b", 1, 0), sq("c", 0, 1), sq("d", 1, 1)]).dense()
    np.testing.assert_array_equal(W, np.ones((4, 4)) - np.eye(4))


def test_queen_matches_boundary_intersection_oracle(rng):
    areas = grid_areas(4, 5, origin=(0.0, 0.0), cell=1.0)
    W = build_queen_weights(areas).dense()
    for i, a in enumerate(areas):
        for j, b in enumerate(areas):
            expect = i != j and a.geometry.boundary.intersects(b.geometry.boundary)
            assert W[i, j] == expect


def test_queen_distant_and_single():
    W = build_queen_weights([sq("a", 0, 0), sq("b", 10, 10)])
    np.testing.assert_array_equal(W.dense(), np.zeros((2, 2)))
    assert build_queen_weights([sq("a", 0, 0)]).dense().shape == (1, 1)


def test_queen_snap_tolerance():
    W = build_queen_weights([sq("a", 0, 0), sq("b", 1 + 5e-10, 0)])
    assert W.dense()[0, 1] == 1
    W = build_queen_weights([sq("a", 0, 0), sq("b", 1 + 1e-6, 0)])
    assert W.dense()[0, 1] == 0


def test_queen_islands_connected_on_request():
    areas = [sq("a", 0, 0), sq("b", 1, 0), sq("c", 5, 0)]
    W = build_queen_weights(areas, connect_islands=True)
    assert W.dense()[2, 1] == 1 and W.dense()[1, 2] == 1
    assert W.islands_connected


def test_invalid_polygon_fatal_with_id():
    bowtie = Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])
    with pytest.raises(GeometryError, match="bad"):
        build_queen_weights([AreaUnit("bad", bowtie), sq("ok", 3, 3)])


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=12, unique=True))
def test_queen_symmetric_zero_diagonal(cells):
    areas = [sq(f"c{x}_{y}", x, y) for x, y in cells]
    W = build_queen_weights(areas).dense()
    assert np.array_equal(W, W.T) and not np.any(np.diag(W)) and np.isin(W, (0, 1)).all()


def test_spatial_weights_from_dense_validation():
    with pytest.raises(ValueError):
        SpatialWeights.from_dense([[0, 1], [0, 0]])
    with pytest.raises(ValueError):
        SpatialWeights.from_dense([[1, 0], [0, 0]])


def test_point_assignment():
    areas = [sq("b", 0, 0), sq("a", 1, 0)]
    assert assign_point_to_area((0.5, 0.5), areas) == "b"
    assert assign_point_to_area((5.0, 5.0), areas) is None
    assert assign_point_to_area((1.0, 0.5), areas) == "a"


def test_population_weighted_examples():
    v = population_weighted_aggregate(["t1", "t2"], [10.0, 20.0], [100.0, 300.0], {"t1": {"D": 1.0}, "t2": {"D": 1.0}}, ["D"])
    assert v[0] == pytest.approx(17.5)
    v = population_weighted_aggregate(["t1", "t2"], [4.0, 4.0], [5.0, 5.0], {"t1": {"D": 1.0}, "t2": {"D": 1.0}}, ["D"])
    assert v[0] == pytest.approx(4.0)
    v = population_weighted_aggregate(["t1"], [7.0], [50.0], {"t1": {"D1": 0.25, "D2": 0.75}}, ["D1", "D2"])
    np.testing.assert_allclose(v, [7.0, 7.0])


def test_population_weighted_errors_and_missing():
    with pytest.raises(ValueError):
        population_weighted_aggregate(["t"], [1.0], [0.0], {"t": {"D": 1.0}}, ["D"])
    with pytest.raises(ValueError):
        population_weighted_aggregate(["t"], [1.0], [1.0], {"t": {"D": 0.7, "E": 0.6}}, ["D", "E"])
    with pytest.raises(ValueError):
        population_weighted_aggregate(["t"], [1.0], [-1.0], {"t": {"D": 1.0}}, ["D"])
    v = population_weighted_aggregate(["t"], [1.0], [3.0], {"t": {"D": 1.0}}, ["D", "Empty"])
    assert v[0] == 1.0 and math.isnan(v[1])


@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=8),
    st.floats(0.01, 1000.0),
    st.integers(0, 2**31),
)
def test_aggregation_convex_and_scale_invariant(values, c, seed):
    r = np.random.default_rng(seed)
    n = len(values)
    ids = [f"t{i}" for i in range(n)]
    pops = r.uniform(1, 100, n)
    memb = {t: {"D": float(r.uniform(0.1, 1.0))} for t in ids}
    a = population_weighted_aggregate(ids, values, pops, memb, ["D"])[0]
    b = population_weighted_aggregate(ids, values, c * pops, memb, ["D"])[0]
    assert min(values) - 1e-9 <= a <= max(values) + 1e-9
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_compute_proportions_examples():
    lab = lambda ds: [binarize_delay(d) for d in ds]  # noqa: E731
    out = compute_proportions({"A": lab([0, 5, 40]), "B": lab([0, 0]), "C": lab([100]), "E": []})
    assert out["A"] == (pytest.approx(1 / 3), pytest.approx(2 / 3), 3)
    assert out["B"] == (1.0, 1.0, 2) and out["C"] == (0.0, 0.0, 1)
    assert math.isnan(out["E"][0]) and out["E"][2] == 0


def test_memberships():
    districts = [sq("L", 0, 0, 2), sq("R", 2, 0, 2)]
    tracts = [box(0, 0, 1, 1), box(1.5, 0, 2.5, 1)]
    c = membership_by_centroid(["t1", "t2"], tracts, districts)
    assert c == {"t1": {"L": 1.0}, "t2": {"L": 1.0}}
    o = membership_by_overlap(["t1", "t2"], tracts, districts)
    assert o["t1"] == {"L": 1.0} and o["t2"] == {"L": pytest.approx(0.5), "R": pytest.approx(0.5)}


def test_crosswalk():
    m = read_crosswalk("tract_id,district_id,fraction\nt1,D1,0.25\nt1,D2,0.75\n")
    assert m == {"t1": {"D1": 0.25, "D2": 0.75}}


def test_geojson_round_trip():
    areas = grid_areas(2, 2, origin=(0.0, 0.0), cell=1.0)
    for i, a in enumerate(areas):
        a.features = {"f": float(i)}
        a.p_day, a.p_month, a.m, a.population = 0.25, 0.5, 4, 100.0
    text = dumps_geojson(feature_collection(areas))
    back = read_areas(__import__("json").loads(text))
    assert [b.area_id for b in back] == [a.area_id for a in areas]
    assert back[3].features == {"f": 3.0} and back[0].m == 4 and back[0].p_month == 0.5
    assert back[0].geometry.equals(areas[0].geometry)
    x0, y0, x1, y1 = back[0].geometry.bounds
    assert x0 <= back[0].centroid[0] <= x1 and y0 <= back[0].centroid[1] <= y1
