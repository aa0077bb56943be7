"""Parse city crime extracts into validated records and derive delay labels.

A city is described by a small YAML key:value *schema descriptor* naming
the columns of its extract (see ``data/normalized_schema.yaml``), so new
cities need no code. Bad rows never disappear silently: each one becomes a
:class:`RejectDiagnostic`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger(__name__)

DAY_THRESHOLD = 1
MONTH_THRESHOLD = 30
PREMISES = ("domestic", "professional", "other")
MAX_AGE = 120


class SchemaError(ValueError):
    """Fatal problem with a schema descriptor or a file header."""


class DelayError(ValueError):
    """Report date precedes occurrence date."""


@dataclass(frozen=True)
class VictimInfo:
    """Victim attributes; ``None`` is the explicit missing marker."""

    age: int | None = None
    gender: str | None = None
    ethnicity: str | None = None

    def __post_init__(self):
        if self.age is not None and not 0 <= self.age <= MAX_AGE:
            raise ValueError(f"victim age {self.age} outside 0..{MAX_AGE}")


@dataclass(frozen=True)
class CrimeRecord:
    id: str
    occurred_on: date
    reported_on: date
    premise_code: str
    point: tuple[float, float] | None = None
    area_id: str | None = None
    tract_id: str | None = None
    victim: VictimInfo | None = None

    def __post_init__(self):
        if (self.point is None) == (self.area_id is None):
            raise ValueError("location must hold exactly one of point / area id")
        if self.reported_on < self.occurred_on:
            raise DelayError("negative delay")
        if self.premise_code not in PREMISES:
            raise ValueError(f"unknown premise code {self.premise_code!r}")

    @property
    def delay_days(self) -> int:
        return compute_delay(self.occurred_on, self.reported_on)

    @property
    def labels(self) -> "DelayLabels":
        return binarize_delay(self.delay_days)


@dataclass(frozen=True)
class DelayLabels:
    delay_days: int
    d_day: int
    d_month: int


@dataclass(frozen=True)
class RejectDiagnostic:
    row: int
    reason: str
    source: str = ""

    def __str__(self):
        where = f"{self.source}:" if self.source else "row "
        return f"{where}{self.row}: {self.reason}"


def compute_delay(occurred_on, reported_on) -> int:
    """Whole days from occurrence to report; time of day is ignored."""
    if isinstance(occurred_on, datetime):
        occurred_on = occurred_on.date()
    if isinstance(reported_on, datetime):
        reported_on = reported_on.date()
    delta = (reported_on - occurred_on).days
    if delta < 0:
        raise DelayError(f"reported {reported_on} before occurred {occurred_on}")
    return delta


def binarize_delay(delay_days: int) -> DelayLabels:
    """Inclusive day (<= 1) and month (<= 30) reporting indicators."""
    if delay_days < 0:
        raise DelayError("delay must be non-negative")
    return DelayLabels(
        delay_days=int(delay_days),
        d_day=int(delay_days <= DAY_THRESHOLD),
        d_month=int(delay_days <= MONTH_THRESHOLD),
    )


# schema descriptors ---------------------------------------------------------

_COLUMN_KEYS = (
    "id",
    "occurred_on",
    "reported_on",
    "premise",
    "lon",
    "lat",
    "area_id",
    "tract_id",
    "victim_age",
    "victim_gender",
    "victim_ethnicity",
)
_REQUIRED_COLUMNS = ("id", "occurred_on", "reported_on", "premise")
_SCHEMA_KEYS = {"name", "delimiter", "date_formats", "columns", "premise_map", "missing_values"}


@dataclass
class CitySchema:
    name: str
    columns: dict
    delimiter: str = ","
    date_formats: list = field(default_factory=lambda: ["%Y-%m-%d"])
    premise_map: dict = field(default_factory=dict)
    missing_values: list = field(default_factory=lambda: ["", "NA", "N/A", "UNKNOWN", "X"])

    @classmethod
    def from_mapping(cls, data: dict) -> "CitySchema":
        if not isinstance(data, dict):
            raise SchemaError("schema descriptor must be a key: value mapping")
        unknown = set(data) - _SCHEMA_KEYS
        if unknown:
            raise SchemaError(f"unknown schema field(s): {sorted(unknown)}")
        columns = data.get("columns") or {}
        bad = set(columns) - set(_COLUMN_KEYS)
        if bad:
            raise SchemaError(f"unknown schema field(s) under columns: {sorted(bad)}")
        missing = [k for k in _REQUIRED_COLUMNS if k not in columns]
        if missing:
            raise SchemaError(f"schema lacks required column mapping(s): {missing}")
        if ("lon" in columns) != ("lat" in columns):
            raise SchemaError("lon and lat must be mapped together")
        if "lon" not in columns and "area_id" not in columns:
            raise SchemaError("schema must map point (lon/lat) or area_id columns")
        premise_map = {str(k): str(v) for k, v in (data.get("premise_map") or {}).items()}
        for v in premise_map.values():
            if v not in PREMISES:
                raise SchemaError(f"premise_map target {v!r} not in {PREMISES}")
        formats = data.get("date_formats", ["%Y-%m-%d"])
        if isinstance(formats, str):
            formats = [formats]
        kwargs = {
            "name": str(data.get("name", "city")),
            "columns": {k: str(v) for k, v in columns.items()},
            "delimiter": str(data.get("delimiter", ",")),
            "date_formats": list(formats),
            "premise_map": premise_map,
        }
        if "missing_values" in data:
            kwargs["missing_values"] = [str(v) for v in data["missing_values"]]
        return cls(**kwargs)


def load_schema(path) -> CitySchema:
    with open(path, encoding="utf-8") as fh:
        return CitySchema.from_mapping(yaml.safe_load(fh))


def normalized_schema() -> CitySchema:
    """Descriptor for the normalized event files this package writes."""
    text = resources.files("delaylens").joinpath("data/normalized_schema.yaml").read_text("utf-8")
    return CitySchema.from_mapping(yaml.safe_load(text))


# parsing --------------------------------------------------------------------


def _read_text(source) -> str:
    try:
        if isinstance(source, (bytes, bytearray)):
            raw = bytes(source)
        elif isinstance(source, (str, Path)):
            raw = Path(source).read_bytes()
        else:
            raw = source.read()
            if isinstance(raw, str):
                return raw
        return raw.decode("utf-8-sig")
    except (OSError, UnicodeDecodeError) as exc:
        raise OSError(f"unreadable crime extract: {exc}") from exc


def _parse_date(text, formats):
    for fmt in formats:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {text!r}")


def parse_crime_records(source, schema: CitySchema, source_name: str = ""):
    """Parse a delimited extract into ``(records, diagnostics)``.

    ``len(records) + len(diagnostics)`` always equals the number of data
    rows. Fatal problems (unreadable input, a mapped column missing from
    the header) raise; row problems become diagnostics.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text, newline=""), delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("crime extract is empty (no header row)") from None
    header = [h.strip() for h in header]
    position = {}
    for key, col in schema.columns.items():
        if col not in header:
            raise SchemaError(f"schema field {key!r} maps to column {col!r}, absent from header")
        position[key] = header.index(col)
    missing_tokens = {m.strip().upper() for m in schema.missing_values}

    def cell(row, key):
        if key not in position:
            return None
        value = row[position[key]].strip()
        return None if value.upper() in missing_tokens else value

    records, diagnostics = [], []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            diagnostics.append(RejectDiagnostic(rowno, "blank row", source_name))
            continue
        if len(row) != len(header):
            diagnostics.append(
                RejectDiagnostic(rowno, f"expected {len(header)} fields, got {len(row)}", source_name)
            )
            continue
        try:
            records.append(_row_to_record(row, cell, schema))
        except DelayError:
            diagnostics.append(RejectDiagnostic(rowno, "negative delay", source_name))
        except ValueError as exc:
            diagnostics.append(RejectDiagnostic(rowno, str(exc), source_name))
    return records, diagnostics


def _row_to_record(row, cell, schema):
    rid = cell(row, "id")
    if not rid:
        raise ValueError("missing id")
    occ_raw, rep_raw = cell(row, "occurred_on"), cell(row, "reported_on")
    if occ_raw is None or rep_raw is None:
        raise ValueError("missing date")
    occurred = _parse_date(occ_raw, schema.date_formats)
    reported = _parse_date(rep_raw, schema.date_formats)
    if reported < occurred:
        raise DelayError("negative delay")

    raw_premise = cell(row, "premise") or ""
    if raw_premise in PREMISES:
        premise = raw_premise
    else:
        premise = schema.premise_map.get(raw_premise, "other")

    point, area = None, None
    lon, lat = cell(row, "lon"), cell(row, "lat")
    if lon is not None and lat is not None:
        point = (float(lon), float(lat))
        if not (math.isfinite(point[0]) and math.isfinite(point[1])):
            raise ValueError("non-finite coordinates")
    else:
        area = cell(row, "area_id")
        if area is None:
            raise ValueError("missing location")

    victim = None
    if any(k in schema.columns for k in ("victim_age", "victim_gender", "victim_ethnicity")):
        age_raw = cell(row, "victim_age")
        age = None
        if age_raw is not None:
            try:
                age = int(float(age_raw))
            except ValueError:
                raise ValueError(f"bad victim age {age_raw!r}") from None
        victim = VictimInfo(age, cell(row, "victim_gender"), cell(row, "victim_ethnicity"))

    return CrimeRecord(
        id=rid,
        occurred_on=occurred,
        reported_on=reported,
        premise_code=premise,
        point=point,
        area_id=area,
        tract_id=cell(row, "tract_id"),
        victim=victim,
    )


NORMALIZED_COLUMNS = [
    "id",
    "occurred_on",
    "reported_on",
    "premise",
    "lon",
    "lat",
    "area_id",
    "tract_id",
    "victim_age",
    "victim_gender",
    "victim_ethnicity",
    "delay_days",
    "d_day",
    "d_month",
]


def _fmt_float(v):
    return repr(float(v))


def write_normalized(records, stream) -> None:
    """Write records (plus their labels) in the normalized event layout."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(NORMALIZED_COLUMNS)
    for r in records:
        lab = r.labels
        v = r.victim or VictimInfo()
        writer.writerow(
            [
                r.id,
                r.occurred_on.isoformat(),
                r.reported_on.isoformat(),
                r.premise_code,
                _fmt_float(r.point[0]) if r.point else "",
                _fmt_float(r.point[1]) if r.point else "",
                r.area_id or "",
                r.tract_id or "",
                "" if v.age is None else v.age,
                v.gender or "",
                v.ethnicity or "",
                lab.delay_days,
                lab.d_day,
                lab.d_month,
            ]
        )


def normalized_text(records) -> str:
    buf = io.StringIO()
    write_normalized(records, buf)
    return buf.getvalue()


def read_normalized(path_or_bytes):
    records, diagnostics = parse_crime_records(path_or_bytes, normalized_schema())
    if diagnostics:
        raise SchemaError(f"normalized event file has invalid rows: {diagnostics[0]}")
    return records


# scope filtering ------------------------------------------------------------


def filter_scope(records, date_window, premises):
    """Records whose occurrence date lies in ``[start, end]`` and whose premise is allowed."""
    start, end = date_window
    premises = set(premises)
    kept = [r for r in records if start <= r.occurred_on <= end and r.premise_code in premises]
    if not kept:
        log.warning("scope filter retained no records")
    return kept


# feature tables -------------------------------------------------------------


@dataclass
class FeatureTable:
    keys: list
    columns: list
    values: np.ndarray  # (n_keys, n_columns); NaN marks a missing cell

    def __post_init__(self):
        if len(self.keys) == 0 or len(self.columns) == 0:
            raise SchemaError("feature table is empty")
        seen = set()
        for k in self.keys:
            if k in seen:
                raise SchemaError(f"duplicate key {k!r} in feature table")
            seen.add(k)
        self._index = {k: i for i, k in enumerate(self.keys)}

    def row(self, key):
        return self._index.get(key)

    def column(self, name) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, columns) -> "FeatureTable":
        idx = [self.columns.index(c) for c in columns]
        return FeatureTable(list(self.keys), list(columns), self.values[:, idx])


def read_feature_table(source, key_column: str = "tract_id", delimiter: str = ",") -> FeatureTable:
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text, newline=""), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("feature table is empty") from None
    if key_column not in header:
        raise SchemaError(f"feature table lacks key column {key_column!r}")
    kpos = header.index(key_column)
    columns = [h for i, h in enumerate(header) if i != kpos]
    keys, rows = [], []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"feature table row {rowno}: expected {len(header)} fields")
        keys.append(row[kpos].strip())
        vals = []
        for i, c in enumerate(row):
            if i == kpos:
                continue
            c = c.strip()
            try:
                vals.append(float(c) if c else math.nan)
            except ValueError:
                vals.append(math.nan)
        rows.append(vals)
    return FeatureTable(keys, columns, np.asarray(rows, dtype=np.float64).reshape(len(keys), len(columns)))


@dataclass
class FeatureMatrix:
    values: np.ndarray
    columns: list
    kept: np.ndarray  # indices into the left-hand input that resolved
    missing_rate: dict
    diagnostics: list


def join_features(keys, table: FeatureTable, columns=None) -> FeatureMatrix:
    """Attach one feature row per left-hand key, in ``table`` column order.

    Unresolved keys are reported and excluded. Missing cells stay NaN here;
    they are median-imputed per training split by :class:`MedianImputer`.
    """
    if table is None or len(table.keys) == 0:
        raise SchemaError("feature table is empty")
    columns = list(table.columns if columns is None else columns)
    col_idx = [table.columns.index(c) for c in columns]
    kept, rows, diags = [], [], []
    for i, key in enumerate(keys):
        r = table.row(key)
        if r is None:
            diags.append(RejectDiagnostic(i, f"key {key!r} not in feature table"))
            continue
        kept.append(i)
        rows.append(r)
    values = table.values[np.asarray(rows, dtype=np.intp)][:, col_idx] if rows else np.zeros((0, len(columns)))
    rate = {
        c: float(np.isnan(values[:, j]).mean()) if len(values) else 0.0 for j, c in enumerate(columns)
    }
    return FeatureMatrix(values, columns, np.asarray(kept, dtype=np.intp), rate, diags)


class MedianImputer:
    """Column medians learned on a training split, applied to any split."""

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        med = np.zeros(X.shape[1])
        for j in range(X.shape[1]):
            col = X[:, j][~np.isnan(X[:, j])]
            med[j] = np.median(col) if len(col) else 0.0
        self.medians_ = med
        self.missing_rate_ = np.isnan(X).mean(axis=0) if len(X) else np.zeros(X.shape[1])
        return self

    def transform(self, X):
        X = np.array(X, dtype=np.float64, copy=True)
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.medians_[cols]
        return X

    def fit_transform(self, X):
        return self.fit(X).transform(X)
