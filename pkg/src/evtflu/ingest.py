"""Weekly incidence series: parsing, quantiles, seasonal baseline, segmentation.

Epidemics start at the first of two consecutive weeks whose rate strictly
exceeds a start threshold. They end either at the last week of the seasonal
baseline excursion that overlaps the run above the start threshold, or
(fallback rule) at the last week of that run. At most one epidemic is kept
per influenza season, a season running from ISO week 31 to ISO week 30 of the
next year.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import CalibrationError, ConfigurationError, DomainError, OrderingError, ParseError

SEASON_START_WEEK = 31
_WEEK_RE = re.compile(r"^\s*(\d{4})\s*-?\s*[Ww]?\s*(\d{1,2})\s*$")
_RATE_COLUMNS = ("rate", "inc100")
_WEEK_COLUMNS = ("week", "iso_week", "semaine")


def weeks_in_year(year: int) -> int:
    return _dt.date(year, 12, 28).isocalendar()[1]


def next_week(year: int, week: int) -> tuple[int, int]:
    if week >= weeks_in_year(year):
        return year + 1, 1
    return year, week + 1


def week_label(year: int, week: int) -> str:
    return f"{year:04d}-W{week:02d}"


@dataclass(frozen=True)
class WeeklyRecord:
    iso_year: int
    iso_week: int
    rate: float

    def __post_init__(self):
        if not 1 <= self.iso_week <= weeks_in_year(self.iso_year):
            raise DomainError(f"invalid ISO week {self.iso_year}-W{self.iso_week:02d}")
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise DomainError(f"rate must be a nonnegative number, got {self.rate}")

    @property
    def key(self) -> tuple[int, int]:
        return self.iso_year, self.iso_week

    @property
    def season(self) -> int:
        return self.iso_year if self.iso_week >= SEASON_START_WEEK else self.iso_year - 1


@dataclass(frozen=True)
class IncidenceSeries:
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        keys = [r.key for r in self.records]
        for i in range(1, len(keys)):
            if keys[i] <= keys[i - 1]:
                raise OrderingError(f"weeks not strictly increasing at {week_label(*keys[i])}")

    def __len__(self):
        return len(self.records)

    @property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.records], dtype=float)

    @property
    def labels(self) -> list[str]:
        return [week_label(*r.key) for r in self.records]

    def gaps(self) -> list[tuple[int, int]]:
        """(year, week) keys that are missing between consecutive records."""
        out = []
        for a, b in zip(self.records, self.records[1:]):
            k = next_week(*a.key)
            while k < b.key:
                out.append(k)
                k = next_week(*k)
        return out

    def window(self, first: tuple[int, int] | None = None, last: tuple[int, int] | None = None) -> "IncidenceSeries":
        """Records with ``first <= (year, week) <= last``."""
        return IncidenceSeries(tuple(r for r in self.records
                                     if (first is None or r.key >= tuple(first))
                                     and (last is None or r.key <= tuple(last))))

    def index_of(self, key: tuple[int, int]) -> int:
        for i, r in enumerate(self.records):
            if r.key == tuple(key):
                return i
        raise DomainError(f"week {week_label(*key)} not in series")


def _parse_week(token: str, line: int) -> tuple[int, int]:
    m = _WEEK_RE.match(token)
    if not m:
        raise ParseError(f"cannot read ISO week from {token!r}", line)
    return int(m.group(1)), int(m.group(2))


def _parse_float(token: str, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"cannot read number from {token!r}", line) from None


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def parse_series(data: bytes | str, sort: bool = False, interpolate_missing: bool = False) -> IncidenceSeries:
    """Parse a weekly CSV.

    Accepted layouts: ``week,rate`` with weeks as ``YYYYWW``, ``YYYYWww`` or
    ``YYYY-Www``; ``year,week,rate``; or any header containing a week column
    and a ``rate`` or ``inc100`` column. Lines starting with ``#`` are skipped.

    Args:
        data: CSV content.
        sort: Sort by week before validation (some exported files list the
            most recent week first).
        interpolate_missing: Fill missing weeks by linear interpolation
            instead of rejecting the series.

    Raises:
        ParseError: Malformed row, with its line number.
        OrderingError: Weeks not strictly increasing.
        DomainError: Negative rate or missing weeks.
    """
    text = data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data.lstrip("﻿")
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        rows.append((lineno, [c.strip() for c in row]))
    if not rows:
        return IncidenceSeries(())
    year_col = week_col = rate_col = None
    first_line, first = rows[0]
    if not all(_is_number(c) for c in first[:2]) and not _WEEK_RE.match(first[0]):
        names = [c.lower() for c in first]
        rows = rows[1:]
        rate_col = next((names.index(c) for c in _RATE_COLUMNS if c in names), None)
        week_col = next((names.index(c) for c in _WEEK_COLUMNS if c in names), None)
        year_col = names.index("year") if "year" in names else None
        if rate_col is None or week_col is None:
            raise ParseError("header needs a week column and a rate column", first_line)
    else:
        width = len(first)
        if width == 2:
            week_col, rate_col = 0, 1
        elif width == 3:
            year_col, week_col, rate_col = 0, 1, 2
        else:
            raise ParseError(f"expected 2 or 3 columns without a header, got {width}", first_line)
    records = []
    need = max(c for c in (year_col, week_col, rate_col) if c is not None)
    for lineno, row in rows:
        if len(row) <= need:
            raise ParseError(f"expected at least {need + 1} fields, got {len(row)}", lineno)
        if year_col is not None:
            year = int(_parse_float(row[year_col], lineno))
            week = int(_parse_float(row[week_col], lineno))
        else:
            year, week = _parse_week(row[week_col], lineno)
        rate = _parse_float(row[rate_col], lineno)
        if rate < 0:
            raise DomainError(f"line {lineno}: negative rate {rate}")
        try:
            records.append(WeeklyRecord(year, week, rate))
        except DomainError as exc:
            raise ParseError(str(exc), lineno) from None
    if sort:
        records.sort(key=lambda r: r.key)
    series = IncidenceSeries(tuple(records))
    missing = series.gaps()
    if missing:
        if not interpolate_missing:
            raise DomainError(f"{len(missing)} missing weeks, first {week_label(*missing[0])}")
        series = _interpolate(series)
    return series


def _interpolate(series: IncidenceSeries) -> IncidenceSeries:
    out = [series.records[0]]
    for b in series.records[1:]:
        a = out[-1]
        fill = []
        k = next_week(*a.key)
        while k < b.key:
            fill.append(k)
            k = next_week(*k)
        for j, k in enumerate(fill, start=1):
            t = j / (len(fill) + 1)
            out.append(WeeklyRecord(k[0], k[1], (1 - t) * a.rate + t * b.rate))
        out.append(b)
    return IncidenceSeries(tuple(out))


def empirical_quantile(values, p: float, method: str = "linear") -> float:
    """Sample quantile; the default interpolates order statistics at (k-1)/(n-1)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("empty sample")
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    return float(np.quantile(v, p, method=method))


# --- seasonal baseline -------------------------------------------------------

@dataclass(frozen=True)
class SerflingConfig:
    period: float = 52.18
    level: float = 0.90
    max_iter: int = 20


def _design(n: int, period: float) -> np.ndarray:
    t = np.arange(n, dtype=float)
    w = 2.0 * np.pi * t / period
    return np.column_stack([np.ones(n), t, np.sin(w), np.cos(w)])


def serfling_baseline(series, config: SerflingConfig = SerflingConfig()) -> np.ndarray:
    """Upper bound of the prediction interval of a cyclic regression baseline.

    The regression (intercept, linear trend, one annual harmonic pair) is
    refit on the weeks at or below the current bound until the set of
    excluded weeks stops changing.

    Parameters
    ----------
    series : IncidenceSeries or array_like
    config : SerflingConfig

    Returns
    -------
    numpy.ndarray
        One upper bound per week.

    Raises
    ------
    CalibrationError
        Fewer than two years of data, or no stable exclusion set after
        ``config.max_iter`` rounds.
    """
    y = series.rates if isinstance(series, IncidenceSeries) else np.asarray(series, dtype=float)
    n = y.size
    if n < 2 * 52:
        raise CalibrationError("seasonal baseline needs at least two years of weekly data")
    X = _design(n, config.period)
    z = stats.norm.ppf(0.5 + config.level / 2.0)
    keep = np.ones(n, dtype=bool)
    for _ in range(config.max_iter):
        Xk, yk = X[keep], y[keep]
        coef, *_ = np.linalg.lstsq(Xk, yk, rcond=None)
        resid = yk - Xk @ coef
        dof = max(keep.sum() - X.shape[1], 1)
        s = math.sqrt(float(resid @ resid) / dof)
        # zero residual variance would make the bound coincide with the fit
        s = max(s, 1e-9 * max(1.0, float(np.mean(np.abs(yk)))))
        xtx_inv = np.linalg.pinv(Xk.T @ Xk)
        lev = np.einsum("ij,jk,ik->i", X, xtx_inv, X)
        upper = X @ coef + z * s * np.sqrt(1.0 + lev)
        new_keep = y <= upper
        if np.array_equal(new_keep, keep):
            return upper
        keep = new_keep
        if keep.sum() <= X.shape[1]:
            break
    raise CalibrationError(f"baseline exclusion did not stabilize within {config.max_iter} iterations")


# --- segmentation -------------------------------------------------------------

@dataclass(frozen=True)
class Epidemic:
    start_index: int
    end_index: int
    weekly_rates: tuple
    size: float
    season_label: int
    start_week: str = ""

    def __post_init__(self):
        if self.end_index < self.start_index:
            raise DomainError("end_index before start_index")

    @property
    def duration(self) -> int:
        return len(self.weekly_rates)

    def to_dict(self) -> dict:
        return {"season": self.season_label, "start_week": self.start_week,
                "rates": list(self.weekly_rates), "size": self.size,
                "start_index": self.start_index, "end_index": self.end_index}


@dataclass(frozen=True)
class EpidemicFeatures:
    y1: float
    y2: float
    y3: float | None
    size: float
    complete: bool
    season: int | None = None

    def row(self, target: str = "week3") -> tuple[float, float, float]:
        if target == "week3":
            if self.y3 is None:
                raise DomainError("epidemic shorter than three weeks has no third-week value")
            return self.y1, self.y2, self.y3
        if target == "size":
            return self.y1, self.y2, self.size
        raise DomainError(f"unknown target {target!r}")


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    out = []
    i, n = 0, mask.size
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def segment_epidemics(series: IncidenceSeries, start_threshold: float, end_rule: str = "serfling",
                      baseline: np.ndarray | None = None) -> list[Epidemic]:
    """Split a series into epidemics.

    Args:
        series: Weekly series.
        start_threshold: Rates strictly above it count as elevated.
        end_rule: ``"serfling"`` ends an epidemic with the last baseline
            excursion overlapping its elevated run; ``"threshold"`` ends it
            with the elevated run itself.
        baseline: Per-week upper bounds, required for ``"serfling"``.

    Returns:
        Ordered, disjoint epidemics, at most one per season.
    """
    if not start_threshold > 0:
        raise DomainError("start_threshold must be positive")
    if end_rule not in ("serfling", "threshold"):
        raise ConfigurationError(f"unknown end rule {end_rule!r}")
    y = series.rates
    if end_rule == "serfling":
        if baseline is None:
            raise ConfigurationError("the serfling end rule needs a baseline")
        baseline = np.asarray(baseline, dtype=float)
        if baseline.shape != y.shape:
            raise ConfigurationError("baseline length differs from the series")
        excursions = _runs(y > baseline)
    above = y > start_threshold
    epidemics = []
    seasons = set()
    i, n = 0, y.size
    while i + 1 < n:
        if not (above[i] and above[i + 1]):
            i += 1
            continue
        run_end = i + 1
        while run_end + 1 < n and above[run_end + 1]:
            run_end += 1
        end = run_end
        if end_rule == "serfling":
            overlapping = [b for a, b in excursions if a <= run_end and b >= i]
            if overlapping:
                end = max(i + 1, max(overlapping))
        rec = series.records[i]
        if rec.season not in seasons:
            seasons.add(rec.season)
            rates = tuple(float(r) for r in y[i:end + 1])
            epidemics.append(Epidemic(i, end, rates, float(math.fsum(rates)), rec.iso_year,
                                      week_label(*rec.key)))
        i = end + 1
    return epidemics


def epidemic_features(e: Epidemic) -> EpidemicFeatures:
    r = e.weekly_rates
    complete = len(r) >= 3
    return EpidemicFeatures(float(r[0]), float(r[1]) if len(r) > 1 else math.nan,
                            float(r[2]) if complete else None, float(e.size), complete, e.season_label)


def feature_matrix(features: Iterable[EpidemicFeatures], target: str = "week3") -> np.ndarray:
    """Rows ``(y1, y2, y3)`` or ``(y1, y2, size)``; incomplete epidemics are dropped."""
    rows = [f.row(target) for f in features if f.complete or target == "size"]
    return np.array(rows, dtype=float).reshape(-1, 3)


def epidemics_to_json(epidemics: Sequence[Epidemic]) -> str:
    return json.dumps([e.to_dict() for e in epidemics], indent=2)


def epidemics_from_json(text: str) -> list[Epidemic]:
    out = []
    for k, d in enumerate(json.loads(text)):
        rates = tuple(float(v) for v in d["rates"])
        start = int(d.get("start_index", k))
        out.append(Epidemic(start, int(d.get("end_index", start + len(rates) - 1)), rates, float(d["size"]), int(d["season"]),
                            d.get("start_week", "")))
    return out
