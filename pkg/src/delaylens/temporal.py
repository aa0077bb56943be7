"""Calendar features of occurrence dates and median-delay profiles."""

from __future__ import annotations

import calendar as _cal
import csv
import io
from dataclasses import dataclass
from datetime import date
from functools import lru_cache
from importlib import resources

MIN_YEAR, MAX_YEAR = 2000, 2100
_WEEKDAYS = {"MON": 0, "TUE": 1, "WED": 2, "THU": 3, "FRI": 4, "SAT": 5, "SUN": 6}
SEASONS = ("winter", "spring", "summer", "fall")
# meteorological seasons: Dec-Feb winter, Mar-May spring, ...
_SEASON_OF_MONTH = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
                    6: "summer", 7: "summer", 8: "summer", 9: "fall", 10: "fall", 11: "fall"}
IMPUTED_DAYS = (1, 15)


class HolidayCalendar:
    """Holiday dates generated from declarative rules (see ``data/us_federal_holidays.txt``)."""

    def __init__(self, rules=(), fixed_dates=()):
        self.rules = list(rules)
        self.fixed_dates = {d: name for d, name in fixed_dates}
        self._by_year = {}

    @classmethod
    def parse(cls, text: str) -> "HolidayCalendar":
        rules, fixed = [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line[:4].isdigit() and line[4:5] == "-":
                parts = line.split(None, 1)
                fixed.append((date.fromisoformat(parts[0]), parts[1] if len(parts) > 1 else "holiday"))
                continue
            if ":" not in line:
                raise ValueError(f"holiday rule line {lineno}: expected 'name: rule'")
            name, spec = (s.strip() for s in line.split(":", 1))
            tokens = spec.split()
            since = None
            if "since" in tokens:
                i = tokens.index("since")
                since = int(tokens[i + 1])
                tokens = tokens[:i]
            kind = tokens[0]
            if kind == "fixed":
                month, day = (int(x) for x in tokens[1].split("-"))
                rules.append((name, "fixed", (month, day), since))
            elif kind == "nth":
                rules.append((name, "nth", (_WEEKDAYS[tokens[1]], int(tokens[2]), int(tokens[3])), since))
            elif kind == "last":
                rules.append((name, "last", (_WEEKDAYS[tokens[1]], int(tokens[2])), since))
            else:
                raise ValueError(f"holiday rule line {lineno}: unknown rule kind {kind!r}")
        return cls(rules, fixed)

    @classmethod
    def from_file(cls, path) -> "HolidayCalendar":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def holidays(self, year: int) -> dict:
        if year not in self._by_year:
            out = {}
            for name, kind, args, since in self.rules:
                if since is not None and year < since:
                    continue
                if kind == "fixed":
                    d = date(year, *args)
                elif kind == "nth":
                    wd, month, nth = args
                    first = date(year, month, 1)
                    offset = (wd - first.weekday()) % 7
                    d = date(year, month, 1 + offset + 7 * (nth - 1))
                else:
                    wd, month = args
                    last = date(year, month, _cal.monthrange(year, month)[1])
                    d = date(year, month, last.day - (last.weekday() - wd) % 7)
                out[d] = name
            out.update({d: n for d, n in self.fixed_dates.items() if d.year == year})
            self._by_year[year] = out
        return self._by_year[year]

    def is_holiday(self, d: date) -> bool:
        return d in self.holidays(d.year)


@lru_cache(maxsize=1)
def us_federal_holidays() -> HolidayCalendar:
    text = resources.files("delaylens").joinpath("data/us_federal_holidays.txt").read_text("utf-8")
    return HolidayCalendar.parse(text)


@dataclass(frozen=True)
class TemporalFeatures:
    is_weekend: int
    is_holiday: int
    season: str
    month: int
    day_of_month: int
    day_of_year: int
    imputed_occurrence_flag: int

    def as_vector(self) -> list[float]:
        """Numeric encoding in :data:`TEMPORAL_COLUMNS` order (season one-hot)."""
        return [
            float(self.is_weekend),
            float(self.is_holiday),
            *(float(self.season == s) for s in SEASONS),
            float(self.month),
            float(self.day_of_month),
            float(self.day_of_year),
            float(self.imputed_occurrence_flag),
        ]


TEMPORAL_COLUMNS = [
    "is_weekend",
    "is_holiday",
    *(f"season_{s}" for s in SEASONS),
    "month",
    "day_of_month",
    "day_of_year",
    "imputed_occurrence_flag",
]


def extract_temporal_features(d: date, holiday_calendar: HolidayCalendar | None = None) -> TemporalFeatures:
    if not MIN_YEAR <= d.year <= MAX_YEAR:
        raise ValueError(f"date {d} outside supported range {MIN_YEAR}-{MAX_YEAR}")
    cal = holiday_calendar if holiday_calendar is not None else us_federal_holidays()
    return TemporalFeatures(
        is_weekend=int(d.weekday() >= 5),
        is_holiday=int(cal.is_holiday(d)),
        season=_SEASON_OF_MONTH[d.month],
        month=d.month,
        day_of_month=d.day,
        day_of_year=d.timetuple().tm_yday,
        imputed_occurrence_flag=int(d.day in IMPUTED_DAYS),
    )


@dataclass(frozen=True)
class ProfileRow:
    bucket: str
    median: int | None
    count: int

    @property
    def gap(self) -> bool:
        return self.count == 0


def lower_median(values):
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def median_delay_profile(events, grouping: str = "report-month") -> list[ProfileRow]:
    """Median delay per bucket, in bucket order.

    ``events`` are ``(occurred_on, reported_on, delay_days)`` triples or
    objects with those attributes. ``report-month`` buckets are ``YYYY-MM``
    of the report date over the observed span; ``occurrence-day-of-year``
    buckets are ``1..366``. Even-sized buckets use the lower median. Empty
    buckets inside the span are kept as gap rows (``median=None, count=0``).
    """
    events = [_triple(e) for e in events]
    if not events:
        raise ValueError("no events to profile")
    groups = {}
    if grouping == "report-month":
        for occ, rep, delay in events:
            groups.setdefault((rep.year, rep.month), []).append(delay)
        (y0, m0), (y1, m1) = min(groups), max(groups)
        keys = []
        y, m = y0, m0
        while (y, m) <= (y1, m1):
            keys.append((y, m))
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
        label = lambda k: f"{k[0]:04d}-{k[1]:02d}"  # noqa: E731
    elif grouping == "occurrence-day-of-year":
        for occ, rep, delay in events:
            groups.setdefault(occ.timetuple().tm_yday, []).append(delay)
        keys = list(range(1, 367))
        label = str
    else:
        raise ValueError("grouping must be 'report-month' or 'occurrence-day-of-year'")
    rows = []
    for k in keys:
        vals = groups.get(k)
        if vals:
            rows.append(ProfileRow(label(k), lower_median(vals), len(vals)))
        else:
            rows.append(ProfileRow(label(k), None, 0))
    return rows


def _triple(e):
    if isinstance(e, tuple):
        return e
    return (e.occurred_on, e.reported_on, e.delay_days)


def profile_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bucket", "median", "count"])
    for r in rows:
        w.writerow([r.bucket, "" if r.median is None else r.median, r.count])
    return buf.getvalue()
