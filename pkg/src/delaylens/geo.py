"""Area geometries, contiguity weights, point location and areal aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import sparse
from shapely.geometry import Point, mapping, shape
from shapely.strtree import STRtree
from shapely.validation import explain_validity

log = logging.getLogger(__name__)

SNAP_TOLERANCE = 1e-9


class GeometryError(ValueError):
    """Invalid polygon or unusable geometry input."""


@dataclass
class AreaUnit:
    area_id: str
    geometry: object
    population: float = 0.0
    features: dict = field(default_factory=dict)
    p_day: float = math.nan
    p_month: float = math.nan
    m: int = 0
    properties: dict = field(default_factory=dict)

    @property
    def centroid(self) -> tuple[float, float]:
        c = self.geometry.centroid
        return (c.x, c.y)


@dataclass
class SpatialWeights:
    """Binary symmetric adjacency with a zero diagonal."""

    ids: list
    adjacency: sparse.csr_matrix
    islands_connected: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.ids)

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray().astype(np.float64)

    def neighbors(self, j: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[j] : a.indptr[j + 1]]

    def cardinalities(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @classmethod
    def from_dense(cls, W, ids=None) -> "SpatialWeights":
        W = np.asarray(W)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weights must be square")
        if not np.array_equal(W, W.T):
            raise ValueError("weights must be symmetric")
        if np.any(np.diag(W) != 0) or not np.isin(W, (0, 1)).all():
            raise ValueError("weights must be binary with a zero diagonal")
        ids = list(range(W.shape[0])) if ids is None else list(ids)
        return cls(ids, sparse.csr_matrix(W.astype(np.int8)))

    @classmethod
    def from_pairs(cls, ids, pairs) -> "SpatialWeights":
        n = len(ids)
        rows = [i for i, j in pairs] + [j for i, j in pairs]
        cols = [j for i, j in pairs] + [i for i, j in pairs]
        A = sparse.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)).tocsr()
        A.data[:] = 1
        A.sum_duplicates()
        A.data[:] = 1
        A.sort_indices()
        return cls(list(ids), A)


def _check_valid(areas):
    for a in areas:
        g = a.geometry
        if g is None or g.is_empty:
            raise GeometryError(f"area {a.area_id!r}: empty geometry")
        if g.geom_type not in ("Polygon", "MultiPolygon"):
            raise GeometryError(f"area {a.area_id!r}: expected a polygon, got {g.geom_type}")
        if not g.is_valid:
            raise GeometryError(f"area {a.area_id!r}: invalid polygon ({explain_validity(g)})")


def build_queen_weights(areas, tolerance: float = SNAP_TOLERANCE, connect_islands: bool = False) -> SpatialWeights:
    """Queen contiguity: ``w_jk = 1`` when geometries share at least one boundary point.

    Points closer than ``tolerance`` count as shared. With
    ``connect_islands`` every area left without neighbours is linked to
    the area with the nearest centroid, so no row of the matrix is empty.
    """
    _check_valid(areas)
    geoms = [a.geometry for a in areas]
    ids = [a.area_id for a in areas]
    tree = STRtree(geoms)
    left, right = tree.query(geoms, predicate="dwithin", distance=tolerance)
    pairs = sorted({(int(i), int(j)) for i, j in zip(left, right) if i < j})
    W = SpatialWeights.from_pairs(ids, pairs)
    if connect_islands and len(areas) > 1:
        card = W.cardinalities()
        islands = [j for j in range(len(areas)) if card[j] == 0]
        if islands:
            cents = np.array([a.centroid for a in areas])
            extra = []
            for j in islands:
                d = np.hypot(*(cents - cents[j]).T)
                d[j] = np.inf
                k = int(np.argmin(d))
                extra.append((min(j, k), max(j, k)))
                log.info("area %s has no contiguous neighbour; linked to %s", ids[j], ids[k])
            W = SpatialWeights.from_pairs(ids, sorted(set(pairs) | set(extra)))
            W.islands_connected = [ids[j] for j in islands]
    return W


def assign_point_to_area(point, areas):
    """Id of the area covering ``point``; boundary ties go to the smallest id."""
    p = Point(point)
    hits = [a.area_id for a in areas if a.geometry.covers(p)]
    return min(hits) if hits else None


def assign_points(points, areas):
    """Vectorized :func:`assign_point_to_area` for many points."""
    if len(points) == 0:
        return []
    geoms = [a.geometry for a in areas]
    tree = STRtree(geoms)
    pts = shapely.points(np.asarray(points, dtype=np.float64))
    pi, gi = tree.query(pts, predicate="intersects")
    best = [None] * len(points)
    for i, g in zip(pi, gi):
        aid = areas[g].area_id
        if best[i] is None or aid < best[i]:
            best[i] = aid
    return best


def population_weighted_aggregate(tract_ids, tract_values, tract_populations, membership, district_ids):
    """Population-weighted means of tract values per district.

    ``membership`` maps tract id to ``{district id: overlap fraction}``.
    District value = sum(v * pop * frac) / sum(pop * frac). Districts with
    zero effective population come back as NaN; missing (NaN) tract values
    drop out of both sums for that column.
    """
    values = np.asarray(tract_values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    pops = np.asarray(tract_populations, dtype=np.float64)
    if len(tract_ids) != len(values) or len(pops) != len(values):
        raise ValueError("tract ids, values and populations must align")
    if np.any(pops < 0):
        raise ValueError("populations must be non-negative")
    dpos = {d: i for i, d in enumerate(district_ids)}
    weight = np.zeros((len(district_ids), len(tract_ids)))
    for t, tid in enumerate(tract_ids):
        fracs = membership.get(tid, {})
        total = 0.0
        for d, f in fracs.items():
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"tract {tid!r}: overlap fraction {f} outside [0, 1]")
            total += f
            if d in dpos:
                weight[dpos[d], t] += pops[t] * f
        if total > 1.0 + 1e-9:
            raise ValueError(f"tract {tid!r}: overlap fractions sum to {total:.6f} > 1")
    if not np.any(weight.sum(axis=1) > 0):
        raise ValueError("no district has positive effective population")
    present = ~np.isnan(values)
    num = weight @ np.where(present, values, 0.0)
    den = weight @ present.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out[:, 0] if squeeze else out


def membership_by_centroid(tract_ids, tract_geoms, areas) -> dict:
    """Whole-tract assignment: each tract goes to the area covering its centroid."""
    cents = [(g.centroid.x, g.centroid.y) for g in tract_geoms]
    hits = assign_points(cents, areas)
    out = {}
    for tid, aid in zip(tract_ids, hits):
        if aid is None:
            log.warning("tract %s centroid falls outside every area", tid)
            out[tid] = {}
        else:
            out[tid] = {aid: 1.0}
    return out


def membership_by_overlap(tract_ids, tract_geoms, areas) -> dict:
    """Split tracts by intersection-area ratio."""
    tree = STRtree([a.geometry for a in areas])
    out = {}
    for tid, g in zip(tract_ids, tract_geoms):
        total = g.area
        fracs = {}
        if total > 0:
            for k in tree.query(g, predicate="intersects"):
                inter = g.intersection(areas[k].geometry).area
                if inter > 0:
                    fracs[areas[k].area_id] = min(1.0, inter / total)
            s = sum(fracs.values())
            if s > 1.0:
                fracs = {k: v / s for k, v in fracs.items()}
        out[tid] = fracs
    return out


def read_crosswalk(source, delimiter: str = ",") -> dict:
    """Crosswalk rows ``tract_id, district_id, fraction`` -> membership mapping."""
    text = source if isinstance(source, str) and "\n" in source else open(source, encoding="utf-8").read()
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    need = {"tract_id", "district_id", "fraction"}
    if not need <= set(reader.fieldnames or []):
        raise ValueError(f"crosswalk needs columns {sorted(need)}")
    out = {}
    for row in reader:
        out.setdefault(row["tract_id"].strip(), {})[row["district_id"].strip()] = float(row["fraction"])
    return out


def compute_proportions(labels_by_area: dict) -> dict:
    """Per-area ``(p_day, p_month, m)`` from lists of :class:`DelayLabels`.

    Empty groups give ``(nan, nan, 0)`` and are dropped downstream.
    """
    out = {}
    for aid, labels in labels_by_area.items():
        m = len(labels)
        if m == 0:
            out[aid] = (math.nan, math.nan, 0)
            continue
        out[aid] = (
            sum(lab.d_day for lab in labels) / m,
            sum(lab.d_month for lab in labels) / m,
            m,
        )
    return out


# GeoJSON --------------------------------------------------------------------


def read_geojson_features(source):
    if hasattr(source, "read"):
        doc = json.load(source)
    elif isinstance(source, dict):
        doc = source
    else:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise GeometryError("expected a GeoJSON FeatureCollection")
    return doc["features"]


_RESERVED = {"population", "p_day", "p_month", "m", "centroid_lon", "centroid_lat"}


def read_areas(source, id_property: str = "area_id", feature_columns=None) -> list[AreaUnit]:
    """Areas from a GeoJSON FeatureCollection.

    Numeric properties other than the reserved ones become features unless
    ``feature_columns`` names them explicitly.
    """
    areas = []
    for feat in read_geojson_features(source):
        props = dict(feat.get("properties") or {})
        if id_property not in props:
            raise GeometryError(f"feature lacks id property {id_property!r}")
        aid = str(props[id_property])
        geom = shape(feat["geometry"])
        if feature_columns is None:
            feats = {
                k: float(v)
                for k, v in props.items()
                if k != id_property and k not in _RESERVED and isinstance(v, (int, float)) and not isinstance(v, bool)
            }
        else:
            feats = {k: _num(props.get(k)) for k in feature_columns}
        areas.append(
            AreaUnit(
                area_id=aid,
                geometry=geom,
                population=_num(props.get("population", 0.0)),
                features=feats,
                p_day=_num(props.get("p_day")),
                p_month=_num(props.get("p_month")),
                m=int(props.get("m") or 0),
                properties=props,
            )
        )
    return areas


def _num(v):
    if v is None:
        return math.nan
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.floating):
        return _clean(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def feature_collection(areas, extra_properties=None) -> dict:
    """Areas as a GeoJSON dict; ``extra_properties[i]`` merges into feature ``i``."""
    feats = []
    for i, a in enumerate(areas):
        cx, cy = a.centroid
        props = {"area_id": a.area_id, "population": a.population, "m": a.m, "p_day": a.p_day, "p_month": a.p_month}
        props["centroid_lon"], props["centroid_lat"] = cx, cy
        props.update(a.features)
        if extra_properties is not None:
            props.update(extra_properties[i])
        feats.append(
            {
                "type": "Feature",
                "properties": {k: _clean(v) for k, v in props.items()},
                "geometry": mapping(a.geometry),
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def dumps_geojson(doc) -> str:
    return json.dumps(doc, sort_keys=False, separators=(",", ":"), allow_nan=False) + "\n"
