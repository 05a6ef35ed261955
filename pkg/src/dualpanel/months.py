"""Calendar-month arithmetic shared across the pipeline.

Months are the panel's time unit. They are parsed from and rendered to
"YYYY-MM" strings at every file boundary and carried as a small ordered
value type in between.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


@dataclass(frozen=True, order=True)
class Month:
    """A calendar month, ordered chronologically."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        m = _MONTH_RE.match(text.strip())
        if not m:
            raise ValueError(f"expected YYYY-MM, got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def of_date(cls, d: dt.date) -> "Month":
        return cls(d.year, d.month)

    @classmethod
    def from_index(cls, index: int) -> "Month":
        return cls(index // 12, index % 12 + 1)

    def index(self) -> int:
        """Consecutive integer index; adjacent months differ by one."""
        return self.year * 12 + self.month - 1

    def plus(self, n: int) -> "Month":
        return Month.from_index(self.index() + n)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def month_range(start: Month, end: Month) -> list[Month]:
    """All months from start to end inclusive."""
    if end < start:
        raise ValueError(f"month range end {end} before start {start}")
    return [Month.from_index(i) for i in range(start.index(), end.index() + 1)]


def weekdays(month: Month) -> list[dt.date]:
    """Monday-to-Friday calendar dates of a month."""
    first = dt.date(month.year, month.month, 1)
    days = []
    d = first
    while d.month == month.month:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days
