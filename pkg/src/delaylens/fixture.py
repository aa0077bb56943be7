"""Deterministic synthetic data: a fixture city plus small generative test sets.

No real crime data ships with the package. The fixture city mimics the
layout of a city extract (raw column names, premise descriptions, US-style
timestamps) so every CLI stage can run end to end.
"""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit
from shapely.geometry import box

from .geo import AreaUnit, dumps_geojson, feature_collection
from .ingest import CrimeRecord, FeatureTable, VictimInfo
from .temporal import us_federal_holidays

ORIGIN = (-118.40, 33.90)
CELL = 0.02
TRACT_FEATURES = [
    "median_age",
    "pct_female",
    "pct_black",
    "pct_hispanic",
    "household_size",
    "occupants_per_room",
    "single_households",
    "rent_burden",
    "hs_degree",
    "median_income",
    "unemployment",
    "uninsured",
]

RAW_PREMISES = {
    "SINGLE FAMILY DWELLING": "domestic",
    "MULTI-UNIT DWELLING (APARTMENT, DUPLEX, ETC)": "domestic",
    "OFFICE BUILDING/OFFICE": "professional",
    "HOSPITAL": "professional",
    "STREET": "other",
    "PARKING LOT": "other",
}

FIXTURE_SCHEMA = {
    "name": "fixture-city",
    "delimiter": ",",
    "date_formats": ["%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y"],
    "missing_values": ["", "X", "NA"],
    "columns": {
        "id": "DR_NO",
        "occurred_on": "DATE OCC",
        "reported_on": "Date Rptd",
        "premise": "Premis Desc",
        "lon": "LON",
        "lat": "LAT",
        "tract_id": "TRACT",
        "victim_age": "Vict Age",
        "victim_gender": "Vict Sex",
        "victim_ethnicity": "Vict Descent",
    },
    "premise_map": {k: v for k, v in RAW_PREMISES.items() if v != "other"},
}

FIXTURE_CONFIG = {
    "seed": 7,
    "aggregated": {
        "forest": {"n_trees": 100, "min_samples_leaf": 5},
        "boosting": {"n_trees": 100, "max_depth": 2, "learning_rate": 0.05},
        "gp": {"grid_points": 6},
        "importance_repeats": 5,
        "importance_folds": 5,
    },
    "disaggregated": {
        "forest": {"n_trees": 30, "min_samples_leaf": 20, "max_depth": 8},
        "boosting": {"n_trees": 40, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 20},
        "gp": {"max_train": 600, "selection_sample": 250, "grid_points": 2},
        "importance_repeats": 3,
        "importance_folds": 3,
    },
}


def _smooth_field(rng, xy, n_bumps=4, scale=0.06):
    out = np.zeros(len(xy))
    for _ in range(n_bumps):
        center = np.array(ORIGIN) + rng.random(2) * np.array([10 * CELL, 6 * CELL])
        amp = rng.normal()
        d2 = ((xy - center) ** 2).sum(axis=1)
        out += amp * np.exp(-d2 / (2 * scale**2))
    return (out - out.mean()) / (out.std() + 1e-12)


def grid_areas(rows, cols, origin=ORIGIN, cell=CELL, prefix="D"):
    width = len(str(rows * cols))
    areas = []
    for r in range(rows):
        for c in range(cols):
            x0, y0 = origin[0] + c * cell, origin[1] + r * cell
            aid = f"{prefix}{r * cols + c + 1:0{width}d}"
            areas.append(AreaUnit(aid, box(x0, y0, x0 + cell, y0 + cell)))
    return areas


def fixture_city(seed: int = 7, n_events: int = 5000):
    """Build the fixture city in memory.

    Returns a dict with ``districts`` (60 areas), ``tracts`` (240 areas),
    ``tract_table`` (:class:`FeatureTable` incl. ``population``),
    ``crimes_csv`` (raw extract text) and ``schema`` (descriptor mapping).
    """
    rng = np.random.default_rng(seed)
    districts = grid_areas(6, 10)
    tracts = grid_areas(12, 20, cell=CELL / 2, prefix="T")
    txy = np.array([t.centroid for t in tracts])
    n_t = len(tracts)

    fields = {name: _smooth_field(rng, txy) for name in TRACT_FEATURES}
    base = {
        "median_age": (34, 5),
        "pct_female": (0.51, 0.02),
        "pct_black": (0.12, 0.06),
        "pct_hispanic": (0.45, 0.15),
        "household_size": (2.9, 0.4),
        "occupants_per_room": (0.9, 0.2),
        "single_households": (0.28, 0.07),
        "rent_burden": (0.33, 0.06),
        "hs_degree": (0.74, 0.1),
        "median_income": (52000, 15000),
        "unemployment": (0.08, 0.025),
        "uninsured": (0.18, 0.05),
    }
    values = np.column_stack(
        [base[f][0] + base[f][1] * (0.8 * fields[f] + 0.6 * rng.normal(size=n_t)) for f in TRACT_FEATURES]
    )
    values[:, [2, 3]] = np.clip(values[:, [2, 3]], 0.0, 1.0)
    # a few missing cells exercise the imputation path
    holes = rng.random(values.shape) < 0.01
    values[holes] = np.nan
    population = np.round(1500 + 4000 * rng.random(n_t))
    table = FeatureTable(
        [t.area_id for t in tracts],
        ["population", *TRACT_FEATURES],
        np.column_stack([population, values]),
    )

    # reporting propensity: victim age dominates, housing and ethnicity composition matter
    spatial = _smooth_field(rng, txy, n_bumps=3, scale=0.05)
    fz = {f: (values[:, i] - np.nanmean(values[:, i])) / np.nanstd(values[:, i]) for i, f in enumerate(TRACT_FEATURES)}
    fz = {f: np.nan_to_num(v) for f, v in fz.items()}
    tract_effect = (
        0.35 * fz["occupants_per_room"]
        + 0.25 * fz["household_size"]
        + 0.3 * fz["pct_black"]
        - 0.3 * fz["pct_hispanic"]
        + 0.25 * spatial
    )

    weights = population / population.sum()
    t_idx = rng.choice(n_t, size=n_events, p=weights)
    holidays = us_federal_holidays()
    start = date(2012, 1, 1)
    span = (date(2017, 12, 31) - start).days
    premises = list(RAW_PREMISES)
    p_premise = np.array([0.35, 0.3, 0.12, 0.08, 0.1, 0.05])
    genders = ["F", "M"]
    ethnicities = ["A", "B", "H", "O", "W"]
    p_eth = np.array([0.08, 0.2, 0.45, 0.07, 0.2])

    rows = []
    for i in range(n_events):
        t = tracts[t_idx[i]]
        x0, y0, x1, y1 = t.geometry.bounds
        lon = x0 + (0.05 + 0.9 * rng.random()) * (x1 - x0)
        lat = y0 + (0.05 + 0.9 * rng.random()) * (y1 - y0)
        occ = start + timedelta(days=int(rng.integers(0, span + 1)))
        age = int(np.clip(rng.gamma(6.0, 4.5) + 10, 12, 85))
        score = -0.9 * (age - 32) / 10.0 + tract_effect[t_idx[i]]
        if holidays.is_holiday(occ):
            score -= 0.8
        if occ.weekday() >= 5:
            score -= 0.15
        u = rng.random()
        if u < expit(score - 0.2):
            delay = int(rng.integers(0, 2))
        elif u < expit(score + 1.2):
            delay = int(rng.integers(2, 31))
        else:
            delay = int(31 + rng.exponential(150))
        if delay > 30 and rng.random() < 0.4:
            # unknown occurrence date recorded as 1st or 15th of the month
            occ = occ.replace(day=1 if rng.random() < 0.5 else 15)
        rep = occ + timedelta(days=delay)
        gender = genders[int(rng.random() < 0.1)] if rng.random() > 0.02 else "X"
        eth = ethnicities[rng.choice(5, p=p_eth)] if rng.random() > 0.05 else ""
        vage = "" if rng.random() < 0.03 else str(age)
        rows.append(
            [
                f"{120000000 + i:09d}",
                f"{rep:%m/%d/%Y} 12:00:00 AM",
                f"{occ:%m/%d/%Y} 12:00:00 AM",
                premises[rng.choice(len(premises), p=p_premise)],
                f"{lat:.6f}",
                f"{lon:.6f}",
                t.area_id,
                vage,
                gender,
                eth,
            ]
        )
    # a handful of corrupt rows: reversed dates, unparseable date
    for j in range(3):
        k = (17 + j * 101) % n_events
        rows[k][1], rows[k][2] = "01/01/2013 12:00:00 AM", "03/01/2013 12:00:00 AM"
    rows[555 % n_events][2] = "13/45/2014 12:00:00 AM"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["DR_NO", "Date Rptd", "DATE OCC", "Premis Desc", "LAT", "LON", "TRACT", "Vict Age", "Vict Sex", "Vict Descent"])
    w.writerows(rows)
    return {
        "districts": districts,
        "tracts": tracts,
        "tract_table": table,
        "crimes_csv": buf.getvalue(),
        "schema": FIXTURE_SCHEMA,
    }


def _table_csv(table: FeatureTable, key="tract_id") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([key, *table.columns])
    for k, row in zip(table.keys, table.values):
        w.writerow([k, *("" if math.isnan(v) else repr(float(v)) for v in row)])
    return buf.getvalue()


def write_fixture(out_dir, seed: int = 7) -> dict:
    """Write the fixture city (and the two-cluster Moran grid) to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = fixture_city(seed)
    paths = {
        "crimes": out / "crimes.csv",
        "schema": out / "schema.yaml",
        "districts": out / "districts.geojson",
        "tracts": out / "tracts.geojson",
        "tract_features": out / "tract_features.csv",
        "config": out / "config.yaml",
        "moran_grid": out / "moran_grid.geojson",
    }
    paths["crimes"].write_text(city["crimes_csv"], encoding="utf-8")
    paths["schema"].write_text(yaml.safe_dump(city["schema"], sort_keys=False), encoding="utf-8")
    strip = lambda areas: {  # noqa: E731
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"area_id": a.area_id}, "geometry": f["geometry"]}
            for a, f in zip(areas, feature_collection(areas)["features"])
        ],
    }
    paths["districts"].write_text(dumps_geojson(strip(city["districts"])), encoding="utf-8")
    paths["tracts"].write_text(dumps_geojson(strip(city["tracts"])), encoding="utf-8")
    paths["tract_features"].write_text(_table_csv(city["tract_table"]), encoding="utf-8")
    paths["config"].write_text(yaml.safe_dump(FIXTURE_CONFIG, sort_keys=False), encoding="utf-8")
    grid, _ = two_cluster_grid()
    paths["moran_grid"].write_text(dumps_geojson(feature_collection(grid)), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


# two-cluster LISA grid ------------------------------------------------------


def two_cluster_grid(noise_seed: int = 3):
    """5x5 unit-square grid: a high block (top-left 3x3), a low block (bottom two rows).

    Returns ``(areas, cores)`` where ``cores`` lists the ids of cells whose
    neighbours all belong to their own cluster. Both ``p_day`` and
    ``p_month`` hold the values.
    """
    rng = np.random.default_rng(noise_seed)
    areas = []
    high = {(r, c) for r in range(3) for c in range(3)}
    low = {(r, c) for r in (3, 4) for c in range(5)}
    vals = {}
    for r in range(5):
        for c in range(5):
            if (r, c) in high:
                v = 0.9 + 0.02 * rng.normal()
            elif (r, c) in low:
                v = 0.1 + 0.02 * rng.normal()
            else:
                v = None
            vals[(r, c)] = v
    # background sits at the overall mean, so its deviations are ~0
    bg_level = np.mean([v for v in vals.values() if v is not None])
    for k, v in vals.items():
        if v is None:
            vals[k] = bg_level + 0.01 * rng.normal()
    for r in range(5):
        for c in range(5):
            aid = f"G{r}{c}"
            v = float(vals[(r, c)])
            # rows grow downward so (0, 0) is top-left
            areas.append(AreaUnit(aid, box(c, 4 - r, c + 1, 5 - r), population=1.0, p_day=v, p_month=v, m=1))
    cores = ["G11", "G41", "G42", "G43"]
    return areas, cores


# generative-recovery sets ---------------------------------------------------


def synthetic_areas(n_side: int = 12, signal: str = "linear+gp", seed: int = 0, n_features: int = 3):
    """Square-grid areas whose proportions follow ``linear(x) + GP(g) + noise`` or pure noise."""
    rng = np.random.default_rng(seed)
    areas = grid_areas(n_side, n_side, origin=(0.0, 0.0), cell=1.0, prefix="A")
    n = len(areas)
    X = rng.normal(size=(n, n_features))
    G = np.array([a.centroid for a in areas])
    if signal == "linear+gp":
        Gs = (G - G.mean(axis=0)) / G.std(axis=0)
        d2 = ((Gs[:, None, :] - Gs[None, :, :]) ** 2).sum(-1)
        K = np.exp(-d2 / (2 * 0.5**2)) + 1e-8 * np.eye(n)
        field_ = np.linalg.cholesky(K) @ rng.normal(size=n)
        beta = np.linspace(1.0, 0.5, n_features)
        p = 0.5 + 0.1 * (X @ beta) / np.linalg.norm(beta) + 0.04 * field_ + 0.005 * rng.normal(size=n)
    elif signal == "noise":
        p = 0.5 + 0.1 * rng.normal(size=n)
    else:
        raise ValueError("signal must be 'linear+gp' or 'noise'")
    for j, a in enumerate(areas):
        a.features = {f"x{k}": float(X[j, k]) for k in range(n_features)}
        a.p_day = float(p[j])
        a.p_month = float(min(1.0, p[j] + 0.2))
        a.m = 10
    return areas


def synthetic_events(n: int = 2000, label: str = "null", seed: int = 0, n_tracts: int = 40):
    """Records and a tract table where the delay is random or driven by victim age only.

    Returns ``(records, feature_table)``.
    """
    rng = np.random.default_rng(seed)
    tract_ids = [f"S{k:03d}" for k in range(n_tracts)]
    table = FeatureTable(
        tract_ids,
        ["population", "f1", "f2", "f3"],
        np.column_stack([np.full(n_tracts, 1000.0), rng.normal(size=(n_tracts, 3))]),
    )
    start = date(2013, 1, 1)
    records = []
    for i in range(n):
        age = int(rng.integers(14, 75))
        occ = start + timedelta(days=int(rng.integers(0, 1400)))
        if label == "null":
            quick = rng.random() < 0.5
        elif label == "victim-age":
            quick = rng.random() < expit((age - 40) / 5.0)
        else:
            raise ValueError("label must be 'null' or 'victim-age'")
        delay = int(rng.integers(0, 2)) if quick else int(rng.integers(31, 300))
        records.append(
            CrimeRecord(
                id=f"E{i:06d}",
                occurred_on=occ,
                reported_on=occ + timedelta(days=delay),
                premise_code="domestic",
                point=(float(rng.random()), float(rng.random())),
                tract_id=tract_ids[int(rng.integers(0, n_tracts))],
                victim=VictimInfo(age, "F" if rng.random() < 0.9 else "M", str(rng.choice(["B", "H", "W"]))),
            )
        )
    return records, table


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
