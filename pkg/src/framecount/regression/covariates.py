"""Per-post covariates: timing, exposure offset and election proximity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, time, timezone
from typing import Sequence

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class CovariateRow:
    post_id: str
    party: int
    episodicity: float
    thematicity: float
    is_reshare: int
    time_of_day: float
    message_length: int
    sqrt_proximity: float
    offset_log: float
    y: int

    def __post_init__(self):
        if not math.isfinite(self.offset_log):
            raise ValueError(f"post {self.post_id}: non-finite offset")
        if self.y < 0:
            raise ValueError(f"post {self.post_id}: negative response")


def _as_utc(value: date | datetime) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return datetime.combine(value, time(0), tzinfo=timezone.utc)


def election_proximity(t: datetime, calendar: Sequence[date | datetime]) -> float:
    """Square root of the distance in days from ``t`` to the nearest election.

    Calendar dates count from midnight UTC.
    """
    if not calendar:
        raise ValueError("empty election calendar")
    t = _as_utc(t)
    days = min(abs((t - _as_utc(e)).total_seconds()) / SECONDS_PER_DAY for e in calendar)
    return math.sqrt(days)


def compute_offset(followers: float, age_days: float) -> float:
    """Log exposure ``log(followers * age_days)`` for a log-link count model."""
    if followers < 1:
        raise ValueError("followers must be >= 1")
    if age_days <= 0:
        raise ValueError("message age must be positive (post is newer than the harvest instant)")
    return math.log(followers) + math.log(age_days)


def message_age_days(created_at: datetime, harvest_instant: datetime) -> float:
    return (_as_utc(harvest_instant) - _as_utc(created_at)).total_seconds() / SECONDS_PER_DAY


def time_of_day(ts: datetime) -> float:
    """Fractional hours since UTC midnight, in [0, 24)."""
    ts = _as_utc(ts).astimezone(timezone.utc)
    return ts.hour + ts.minute / 60.0 + (ts.second + ts.microsecond / 1e6) / 3600.0
