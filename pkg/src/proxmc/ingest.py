"""Reading JHU-format cumulative CSVs and preparing analysis windows.

The input format is the global confirmed-cases time series: header
``Province/State,Country/Region,Lat,Long,<dates...>`` with dates in M/D/YY
form, one row per province (possibly several per country).  Ingestion sums
provinces, differences to daily counts, clamps negative revisions to zero,
and slices an analysis window together with its serial-interval history.
"""

from __future__ import annotations

import csv
import datetime
import difflib
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DataError
from .model import CountSeries, Hyperparams


class Series(NamedTuple):
    """A dated value sequence (cumulative or daily)."""

    dates: tuple
    values: np.ndarray


def _parse_header_dates(fields):
    dates = []
    for j, f in enumerate(fields):
        try:
            m, d, y = f.split("/")
            dates.append(datetime.date(2000 + int(y), int(m), int(d)))
        except (ValueError, TypeError) as exc:
            raise DataError(f"bad date column {j + 5}: {f!r}") from exc
    return tuple(dates)


def parse_jhu_csv(path, country: str) -> Series:
    """Country-level cumulative confirmed series (provinces summed)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 5 or header[1] != "Country/Region":
            raise DataError(f"{path}: not a JHU time-series header: {header[:4]}")
        dates = _parse_header_dates(header[4:])
        total = np.zeros(len(dates))
        seen = []
        found = False
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            seen.append(row[1])
            if row[1] != country:
                continue
            try:
                total += np.array([float(v) if v else 0.0 for v in row[4:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric count: {exc}") from exc
            found = True
    if not found:
        near = difflib.get_close_matches(country, sorted(set(seen)), n=3)
        hint = f"; close matches: {', '.join(near)}" if near else ""
        raise DataError(f"country {country!r} not found{hint}")
    return Series(dates=dates, values=total)


def to_daily(cumulative: Series) -> Series:
    """First-difference to daily counts; negative revisions clamp to zero."""
    if len(cumulative.dates) < 2:
        raise DataError("need at least two dates to difference")
    daily = np.maximum(np.diff(cumulative.values), 0.0)
    return Series(dates=cumulative.dates[1:], values=daily)


def window(daily: Series, start_date, n_days: int = 35, tau: int = 26) -> CountSeries:
    """Slice ``n_days`` from ``start_date`` plus the ``tau`` preceding days."""
    if isinstance(start_date, str):
        start_date = datetime.date.fromisoformat(start_date)
    dates = daily.dates
    first, last = dates[0], dates[-1]
    need_first = start_date - datetime.timedelta(days=tau)
    need_last = start_date + datetime.timedelta(days=n_days - 1)
    if need_first < first or need_last > last:
        earliest = first + datetime.timedelta(days=tau)
        raise DataError(
            f"window [{need_first} .. {need_last}] not covered by data "
            f"[{first} .. {last}]; earliest admissible start is {earliest}"
        )
    i0 = (start_date - first).days
    return CountSeries(
        dates=dates[i0 : i0 + n_days],
        values=daily.values[i0 : i0 + n_days],
        history=daily.values[i0 - tau : i0],
    )


def lambda_defaults(counts: CountSeries) -> Hyperparams:
    """Paper defaults: lambda_O = 0.05, lambda_R = 3.5 sqrt(6) sigma_Z / 4.

    sigma_Z is the n-1 sample standard deviation of the window counts
    (the estimator choice shifts lambda_R by under 2% at T = 35).
    """
    if counts.T < 2:
        raise ConfigurationError("need at least two days to estimate sigma_Z")
    sigma = float(np.std(counts.values, ddof=1))
    if sigma == 0.0:
        raise DataError("zero-variance window: lambda_R would not be positive")
    return Hyperparams(lambda_r=3.5 * np.sqrt(6.0) * sigma / 4.0, lambda_o=0.05)
