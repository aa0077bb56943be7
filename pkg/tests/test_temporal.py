from datetime import date, timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaylens.temporal import (
    TEMPORAL_COLUMNS,
    HolidayCalendar,
    extract_temporal_features,
    lower_median,
    median_delay_profile,
    profile_csv,
    us_federal_holidays,
)


def test_independence_day_2015():
    f = extract_temporal_features(date(2015, 7, 4))
    assert (f.is_weekend, f.is_holiday, f.season) == (1, 1, "summer")


def test_new_year_2015():
    f = extract_temporal_features(date(2015, 1, 1))
    assert (f.is_holiday, f.month, f.imputed_occurrence_flag, f.season) == (1, 1, 1, "winter")


def test_plain_wednesday():
    f = extract_temporal_features(date(2015, 3, 11))
    assert (f.is_weekend, f.is_holiday, f.imputed_occurrence_flag) == (0, 0, 0)


def test_out_of_range():
    with pytest.raises(ValueError):
        extract_temporal_features(date(1999, 12, 31))
    with pytest.raises(ValueError):
        extract_temporal_features(date(2101, 1, 1))


@pytest.mark.parametrize(
    "d",
    [date(2015, 1, 19), date(2015, 2, 16), date(2015, 5, 25), date(2015, 9, 7), date(2015, 10, 12),
     date(2015, 11, 11), date(2015, 11, 26), date(2015, 12, 25), date(2016, 5, 30), date(2017, 11, 23)],
)
def test_federal_holidays(d):
    assert us_federal_holidays().is_holiday(d)


def test_juneteenth_since_2021():
    cal = us_federal_holidays()
    assert not cal.is_holiday(date(2020, 6, 19))
    assert cal.is_holiday(date(2021, 6, 19))


def test_custom_calendar_parse():
    cal = HolidayCalendar.parse("# comment\nfirst: fixed 02-03\nthird_mon: nth MON 3 1\n2016-08-08 local fair\n")
    assert cal.is_holiday(date(2016, 2, 3)) and cal.is_holiday(date(2016, 3, 7)) and cal.is_holiday(date(2016, 8, 8))
    with pytest.raises(ValueError):
        HolidayCalendar.parse("bad: weekly MON")


@given(st.dates(min_value=date(2000, 1, 1), max_value=date(2100, 12, 31)))
def test_features_pure_and_consistent(d):
    a, b = extract_temporal_features(d), extract_temporal_features(d)
    assert a == b
    assert a.imputed_occurrence_flag == int(d.day in (1, 15))
    assert len(a.as_vector()) == len(TEMPORAL_COLUMNS)
    assert sum(a.as_vector()[2:6]) == 1.0


def test_lower_median():
    assert lower_median([1, 2, 3]) == 2
    assert lower_median([1, 2, 3, 10]) == 2


def _ev(occ, delay):
    return (occ, occ + timedelta(days=delay), delay)


def test_profile_report_month_with_gap():
    events = [_ev(date(2015, 1, 3), 1), _ev(date(2015, 1, 5), 3), _ev(date(2015, 1, 9), 2), _ev(date(2015, 3, 1), 10)]
    rows = median_delay_profile(events, "report-month")
    assert [(r.bucket, r.median, r.count) for r in rows] == [("2015-01", 2, 3), ("2015-02", None, 0), ("2015-03", 10, 1)]
    assert profile_csv(rows).splitlines()[2] == "2015-02,,0"


def test_profile_counts_sum_and_errors():
    events = [_ev(date(2015, 1, 1) + timedelta(days=i), i % 40) for i in range(500)]
    for grouping in ("report-month", "occurrence-day-of-year"):
        assert sum(r.count for r in median_delay_profile(events, grouping)) == 500
    assert len(median_delay_profile(events, "occurrence-day-of-year")) == 366
    with pytest.raises(ValueError):
        median_delay_profile([], "report-month")
    with pytest.raises(ValueError):
        median_delay_profile(events, "weekly")


def test_holiday_delays_stand_out():
    cal = us_federal_holidays()
    events = []
    for year in range(2013, 2017):
        d = date(year, 1, 1)
        while d.year == year:
            base = 4
            events.append(_ev(d, base * 2 if cal.is_holiday(d) else base))
            d += timedelta(days=1)
    rows = {int(r.bucket): r for r in median_delay_profile(events, "occurrence-day-of-year")}
    assert rows[185].median > rows[184].median  # July 4th
    assert rows[359].median > rows[358].median  # Dec 25th
