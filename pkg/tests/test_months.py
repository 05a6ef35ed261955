"""Month arithmetic sanity checks."""

import calendar
import datetime as dt

import pytest

from dualpanel.months import Month, month_range, weekdays


def test_parse_and_str_roundtrip():
    m = Month.parse("2014-11")
    assert (m.year, m.month) == (2014, 11)
    assert str(m) == "2014-11"
    assert str(Month(2011, 1)) == "2011-01"


def test_parse_rejects_garbage():
    for text in ("2014-13", "2014/11", "201411", "2014-1", ""):
        with pytest.raises(ValueError):
            Month.parse(text)


def test_index_is_consecutive():
    assert Month(2014, 12).index() + 1 == Month(2015, 1).index()
    assert Month(2011, 1).plus(0) == Month(2011, 1)
    assert Month(2011, 1).plus(23) == Month(2012, 12)
    assert Month(2011, 1).plus(-1) == Month(2010, 12)


def test_ordering_is_chronological():
    assert Month(2014, 11) < Month(2015, 1)
    assert Month(2014, 11) > Month(2014, 10)


def test_month_range_inclusive():
    months = month_range(Month(2011, 1), Month(2019, 5))
    assert len(months) == 101
    assert months[0] == Month(2011, 1)
    assert months[-1] == Month(2019, 5)
    with pytest.raises(ValueError):
        month_range(Month(2012, 1), Month(2011, 12))


def test_weekdays_against_calendar_module():
    for year, month in ((2014, 11), (2016, 2), (2019, 5)):
        got = weekdays(Month(year, month))
        expected = [
            dt.date(year, month, day)
            for day in range(1, calendar.monthrange(year, month)[1] + 1)
            if dt.date(year, month, day).weekday() < 5
        ]
        assert got == expected
