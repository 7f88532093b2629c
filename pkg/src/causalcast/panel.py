"""Multivariate time-series panels: CSV ingestion, quarterly aggregation and
standard scaling.

A panel is a ``T x N`` matrix of observations with a boolean mask of missing
entries, an ordered list of period labels and a list of variable names.
Quarterly labels are canonicalised to ``"YYYYQn"`` and monthly labels to
``"YYYY-MM"``.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PanelError

QUARTERLY = "quarterly"
MONTHLY = "monthly"

_QUARTER_RE = re.compile(r"^\s*(\d{4})\s*-?\s*Q([1-4])\s*$", re.IGNORECASE)
_MONTH_RE = re.compile(r"^\s*(\d{4})-(\d{1,2})(?:-(\d{1,2}))?\s*$")
_MISSING = {"", "na", "nan", "n/a", "null", "."}


def parse_period(label: str, frequency: str) -> int:
    """Return an integer period ordinal for ``label``.

    Quarters map to ``4 * year + (q - 1)``, months to ``12 * year + (m - 1)``,
    so consecutive periods differ by exactly one.
    """
    if frequency == QUARTERLY:
        m = _QUARTER_RE.match(label)
        if m is None:
            raise ValueError(f"not a quarterly label: {label!r}")
        return 4 * int(m.group(1)) + int(m.group(2)) - 1
    if frequency == MONTHLY:
        m = _MONTH_RE.match(label)
        if m is None:
            raise ValueError(f"not a monthly label: {label!r}")
        month = int(m.group(2))
        if not 1 <= month <= 12:
            raise ValueError(f"month out of range: {label!r}")
        return 12 * int(m.group(1)) + month - 1
    raise ConfigurationError(f"unknown frequency {frequency!r}")


def format_period(ordinal: int, frequency: str) -> str:
    if frequency == QUARTERLY:
        return f"{ordinal // 4:04d}Q{ordinal % 4 + 1}"
    if frequency == MONTHLY:
        return f"{ordinal // 12:04d}-{ordinal % 12 + 1:02d}"
    raise ConfigurationError(f"unknown frequency {frequency!r}")


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Aligned multivariate series.

    Attributes
    ----------
    names : list of str
        Variable identifiers, one per column.
    index : list of str
        Canonical period labels, strictly increasing and equally spaced.
    values : ndarray, shape (T, N)
        Observations. Masked entries hold NaN.
    mask : ndarray of bool, shape (T, N)
        True where the observation is missing.
    frequency : {"quarterly", "monthly"}
    """

    names: list
    index: list
    values: np.ndarray
    mask: np.ndarray = None
    frequency: str = QUARTERLY

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise PanelError("values must be a T x N matrix")
        mask = np.isnan(values) if self.mask is None else np.array(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise PanelError(f"mask shape {mask.shape} != values shape {values.shape}")
        if values.shape != (len(self.index), len(self.names)):
            raise PanelError(
                f"values shape {values.shape} does not match "
                f"{len(self.index)} periods x {len(self.names)} variables"
            )
        if np.isnan(values[~mask]).any():
            raise PanelError("NaN found outside masked entries")
        if len(set(self.names)) != len(self.names):
            raise PanelError(f"duplicate variable names: {self.names}")
        ordinals = [parse_period(lab, self.frequency) for lab in self.index]
        if any(b - a != 1 for a, b in zip(ordinals, ordinals[1:])):
            raise PanelError("index must be strictly increasing and equally spaced")
        values = values.copy()
        values[mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "names", list(self.names))
        object.__setattr__(self, "index", [format_period(o, self.frequency) for o in ordinals])
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise ConfigurationError(f"unknown variable {name!r}; have {self.names}") from None

    def select(self, names) -> "TimeSeriesPanel":
        idx = [self.names.index(n) for n in names]
        return TimeSeriesPanel(list(names), self.index, self.values[:, idx],
                               self.mask[:, idx], self.frequency)

    def slice(self, start: int, stop: int) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.names, self.index[start:stop], self.values[start:stop],
                               self.mask[start:stop], self.frequency)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "index": list(self.index),
            "values": [[None if np.isnan(v) else float(v) for v in row] for row in self.values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, frequency: str = QUARTERLY) -> "TimeSeriesPanel":
        vals = np.array([[np.nan if v is None else v for v in row] for row in d["values"]],
                        dtype=float).reshape(len(d["index"]), len(d["names"]))
        return cls(d["names"], d["index"], vals, frequency=frequency)


@dataclass(frozen=True)
class ScalingParams:
    names: list
    mean: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise PanelError("scale must be positive for every variable")


def load_csv(path, date_column: str | None = None, frequency: str = QUARTERLY) -> TimeSeriesPanel:
    """Read a panel from a UTF-8 CSV file with a header row.

    ``date_column`` defaults to the first column. Rows are sorted by date.
    Empty cells and the usual NA spellings become masked entries.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PanelError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    date_col = header[0] if date_column is None else date_column
    if date_col not in header:
        raise PanelError(f"{path}: date column {date_col!r} not in header {header}")
    d = header.index(date_col)
    names = [h for i, h in enumerate(header) if i != d]

    records = []
    seen = {}
    for rowno, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
        try:
            ordinal = parse_period(row[d], frequency)
        except ValueError as exc:
            raise PanelError(f"{path}: row {rowno}: cannot parse date: {exc}") from None
        if ordinal in seen:
            raise PanelError(
                f"{path}: duplicate timestamp {row[d].strip()!r} at rows {seen[ordinal]} and {rowno}")
        seen[ordinal] = rowno
        vals = []
        for i, cell in enumerate(row):
            if i == d:
                continue
            cell = cell.strip()
            if cell.lower() in _MISSING:
                vals.append(np.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise PanelError(
                    f"{path}: row {rowno}: cannot parse value {cell!r} in column {header[i]!r}"
                ) from None
        records.append((ordinal, vals))
    if not records:
        raise PanelError(f"{path}: no data rows")
    records.sort(key=lambda r: r[0])
    ordinals = [r[0] for r in records]
    if any(b - a != 1 for a, b in zip(ordinals, ordinals[1:])):
        gaps = [format_period(a + 1, frequency) for a, b in zip(ordinals, ordinals[1:]) if b - a != 1]
        raise PanelError(f"{path}: missing periods after sorting, first gap at {gaps[0]}")
    values = np.array([r[1] for r in records], dtype=float).reshape(len(records), len(names))
    index = [format_period(o, frequency) for o in ordinals]
    return TimeSeriesPanel(names, index, values, frequency=frequency)


def aggregate_quarterly(panel: TimeSeriesPanel, method: str = "mean") -> TimeSeriesPanel:
    """Average a monthly panel over calendar quarters.

    Each quarter must be either fully observed or fully missing for every
    variable; fully missing quarters become masked entries.
    """
    if method != "mean":
        raise ConfigurationError(f"unsupported aggregation method {method!r}")
    if panel.frequency != MONTHLY:
        raise ConfigurationError("aggregate_quarterly expects a monthly panel")
    months = [parse_period(lab, MONTHLY) for lab in panel.index]
    quarters = {}
    for row, m in enumerate(months):
        quarters.setdefault(m // 3, []).append(row)
    keys = sorted(quarters)
    out = np.full((len(keys), panel.N), np.nan)
    for qi, q in enumerate(keys):
        rows = quarters[q]
        label = format_period(q, QUARTERLY)
        if len(rows) != 3:
            raise PanelError(f"quarter {label} covered by {len(rows)} of 3 months")
        block_mask = panel.mask[rows]
        for j in range(panel.N):
            n_obs = int((~block_mask[:, j]).sum())
            if n_obs == 3:
                out[qi, j] = panel.values[rows, j].mean()
            elif n_obs != 0:
                raise PanelError(
                    f"quarter {label} partially observed for {panel.names[j]!r} ({n_obs}/3 months)")
    return TimeSeriesPanel(panel.names, [format_period(q, QUARTERLY) for q in keys], out,
                           frequency=QUARTERLY)


def standard_scale(panel: TimeSeriesPanel) -> tuple[TimeSeriesPanel, ScalingParams]:
    """Centre each variable and divide by its population standard deviation
    (computed over unmasked entries)."""
    mean = np.empty(panel.N)
    scale = np.empty(panel.N)
    for j, name in enumerate(panel.names):
        col = panel.values[~panel.mask[:, j], j]
        if col.size == 0:
            raise PanelError(f"variable {name!r} has no observations")
        mean[j] = col.mean()
        scale[j] = col.std()
        if not scale[j] > 0 or scale[j] <= 1e-12 * max(1.0, abs(mean[j])):
            raise PanelError(f"variable {name!r} is constant; cannot standard-scale")
    scaled = (panel.values - mean) / scale
    params = ScalingParams(list(panel.names), mean, scale)
    return TimeSeriesPanel(panel.names, panel.index, scaled, panel.mask, panel.frequency), params


def inverse_scale(panel: TimeSeriesPanel, params: ScalingParams) -> TimeSeriesPanel:
    if list(panel.names) != list(params.names):
        raise ConfigurationError(
            f"scaling params for {params.names} do not match panel variables {panel.names}")
    values = panel.values * params.scale + params.mean
    return TimeSeriesPanel(panel.names, panel.index, values, panel.mask, panel.frequency)


def longest_observed_span(panel: TimeSeriesPanel) -> tuple[int, int]:
    """Return ``(start, stop)`` of the longest run of fully observed rows.

    Ties go to the earliest run.
    """
    complete = ~panel.mask.any(axis=1)
    best = (0, 0)
    start = None
    for t, ok in enumerate(list(complete) + [False]):
        if ok and start is None:
            start = t
        elif not ok and start is not None:
            if t - start > best[1] - best[0]:
                best = (start, t)
            start = None
    return best
