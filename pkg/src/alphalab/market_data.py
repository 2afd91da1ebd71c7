"""OHLCV panels, forward returns, standardized input windows and day batches."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

FIELDS = ("open", "high", "low", "close", "volume")
PRICE_FIELDS = FIELDS[:4]
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLITS = (250, 30, 30)
MIN_CROSS_SECTION = 20


class PanelFormatError(ValueError):
    """Malformed panel CSV; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OhlcvPanel:
    """Dense asset x day grid of OHLCV values.

    ``values`` has shape ``(n_assets, n_days, 5)`` in ``FIELDS`` order.
    Untradable cells are flagged in ``tradable`` and hold NaN.
    """

    assets: tuple[str, ...]
    days: tuple[str, ...]
    values: np.ndarray
    tradable: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        tradable = np.asarray(self.tradable, dtype=bool)
        n_assets, n_days = len(self.assets), len(self.days)
        if values.shape != (n_assets, n_days, len(FIELDS)):
            raise ValueError(f"values shape {values.shape} != {(n_assets, n_days, len(FIELDS))}")
        if tradable.shape != (n_assets, n_days):
            raise ValueError("tradable mask shape mismatch")
        if any(a >= b for a, b in zip(self.days, self.days[1:])):
            raise ValueError("days must be strictly increasing")
        cells = values[tradable]
        if not np.all(np.isfinite(cells)):
            raise ValueError("non-finite value in a tradable cell")
        if np.any(cells[:, :4] <= 0):
            raise ValueError("non-positive price in a tradable cell")
        if np.any(cells[:, 4] < 0):
            raise ValueError("negative volume in a tradable cell")
        values = values.copy()
        values[~tradable] = np.nan
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "tradable", _readonly(tradable))

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_days(self) -> int:
        return len(self.days)

    def field(self, name: str) -> np.ndarray:
        return self.values[:, :, FIELDS.index(name)]

    @cached_property
    def filled(self) -> np.ndarray:
        """Values with untradable holes forward-filled (back-filled at the start).

        Only used so that expression evaluation stays finite; cells derived
        from filled data are always masked invalid downstream.
        """
        v = self.values.copy()
        for a in range(v.shape[0]):
            ok = self.tradable[a]
            if ok.all():
                continue
            if not ok.any():
                v[a] = 1.0
                continue
            idx = np.where(ok, np.arange(len(ok)), -1)
            idx = np.maximum.accumulate(idx)
            first = np.argmax(ok)
            idx[idx < 0] = first
            v[a] = v[a, idx]
        return _readonly(v)

    def replace_values(self, values: np.ndarray, tradable: np.ndarray | None = None) -> "OhlcvPanel":
        return OhlcvPanel(self.assets, self.days, values,
                          self.tradable if tradable is None else tradable)


@dataclass(frozen=True, eq=False)
class ForwardReturns:
    horizon: int
    values: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class FeaturePanel:
    """One feature's value per (asset, day); ``valid`` marks defined cells."""

    name: str
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        valid = np.asarray(self.valid, dtype=bool) & np.isfinite(values)
        values[~valid] = np.nan
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "valid", _readonly(valid))


# ---------------------------------------------------------------------------
# CSV I/O

PANEL_HEADER = ["date", "asset_id", *FIELDS]


def load_panel(path: str | Path) -> OhlcvPanel:
    """Read a ``date,asset_id,open,high,low,close,volume`` CSV into a dense panel.

    Missing (date, asset) rows become untradable cells.
    """
    rows: dict[tuple[str, str], tuple[float, ...]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file", 1) from None
        if [h.strip() for h in header] != PANEL_HEADER:
            raise PanelFormatError(f"expected header {','.join(PANEL_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PANEL_HEADER):
                raise PanelFormatError(f"expected {len(PANEL_HEADER)} columns, got {len(row)}", lineno)
            date, asset = row[0].strip(), row[1].strip()
            try:
                dt.date.fromisoformat(date)
            except ValueError:
                raise PanelFormatError(f"bad ISO-8601 date {date!r}", lineno) from None
            if not asset:
                raise PanelFormatError("empty asset_id", lineno)
            try:
                nums = tuple(float(c) for c in row[2:])
            except ValueError:
                raise PanelFormatError("non-numeric field", lineno) from None
            if not all(np.isfinite(nums)):
                raise PanelFormatError("non-finite field", lineno)
            if min(nums[:4]) <= 0:
                raise PanelFormatError("non-positive price", lineno)
            if nums[4] < 0:
                raise PanelFormatError("negative volume", lineno)
            if (date, asset) in rows:
                raise PanelFormatError(f"duplicate row for ({date}, {asset})", lineno)
            rows[(date, asset)] = nums

    days = sorted({d for d, _ in rows})
    assets = sorted({a for _, a in rows})
    if len(days) < 2:
        raise PanelFormatError("panel needs at least 2 distinct days")
    day_ix = {d: i for i, d in enumerate(days)}
    asset_ix = {a: i for i, a in enumerate(assets)}
    values = np.full((len(assets), len(days), len(FIELDS)), np.nan)
    tradable = np.zeros((len(assets), len(days)), dtype=bool)
    for (d, a), nums in rows.items():
        values[asset_ix[a], day_ix[d]] = nums
        tradable[asset_ix[a], day_ix[d]] = True
    return OhlcvPanel(tuple(assets), tuple(days), values, tradable)


def write_panel(panel: OhlcvPanel, path: str | Path) -> None:
    """Write tradable cells sorted by (date, asset_id)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for t, day in enumerate(panel.days):
            for a, asset in enumerate(panel.assets):
                if panel.tradable[a, t]:
                    w.writerow([day, asset, *(repr(float(x)) for x in panel.values[a, t])])


def write_feature_csv(feature: FeaturePanel, panel: OhlcvPanel, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset_id", "value"])
        for t, day in enumerate(panel.days):
            for a, asset in enumerate(panel.assets):
                if feature.valid[a, t]:
                    w.writerow([day, asset, repr(float(feature.values[a, t]))])


def read_feature_csv(path: str | Path, panel: OhlcvPanel, name: str | None = None) -> FeaturePanel:
    """Load a ``date,asset_id,value`` file aligned to ``panel``'s grid."""
    day_ix = {d: i for i, d in enumerate(panel.days)}
    asset_ix = {a: i for i, a in enumerate(panel.assets)}
    values = np.full((panel.n_assets, panel.n_days), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "asset_id", "value"]:
            raise PanelFormatError("expected header date,asset_id,value", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise PanelFormatError("expected 3 columns", lineno)
            d, a = row[0].strip(), row[1].strip()
            if d not in day_ix or a not in asset_ix:
                raise PanelFormatError(f"({d}, {a}) not in panel", lineno)
            try:
                values[asset_ix[a], day_ix[d]] = float(row[2])
            except ValueError:
                raise PanelFormatError("non-numeric value", lineno) from None
    return FeaturePanel(name or Path(path).stem, values, np.isfinite(values))


# ---------------------------------------------------------------------------
# Returns, windows, batches

def forward_return(panel: OhlcvPanel, horizon: int = 5) -> ForwardReturns:
    """Simple close-to-close return over ``horizon`` trading days."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon >= panel.n_days:
        raise ValueError(f"horizon {horizon} >= number of days {panel.n_days}")
    close = panel.field("close")
    values = np.full(close.shape, np.nan)
    valid = np.zeros(close.shape, dtype=bool)
    valid[:, :-horizon] = panel.tradable[:, :-horizon] & panel.tradable[:, horizon:]
    with np.errstate(invalid="ignore"):
        ratio = close[:, horizon:] / close[:, :-horizon] - 1.0
    values[:, :-horizon] = np.where(valid[:, :-horizon], ratio, np.nan)
    return ForwardReturns(horizon, _readonly(values), _readonly(valid))


def split_ranges(window_len: int, splits=DEFAULT_SPLITS) -> dict[str, range]:
    """Consecutive train/val/test day ranges starting at the first full window."""
    start = window_len - 1
    out = {}
    for name, n in zip(SPLIT_NAMES, splits):
        out[name] = range(start, start + n)
        start += n
    return out


def required_days(window_len: int, splits=DEFAULT_SPLITS, horizon: int = 5) -> int:
    return window_len + sum(splits) + horizon


@dataclass(frozen=True, eq=False)
class WindowDataset:
    """Standardized 30-day OHLCV windows for every (asset, day) with a full window.

    ``inputs[a, t]`` is the field-major, oldest-first flattening of days
    ``t - window_len + 1 .. t``, z-scored with training-day statistics.
    """

    window_len: int
    inputs: np.ndarray
    valid: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    splits: dict[str, range]
    returns: ForwardReturns
    min_cross_section: int = MIN_CROSS_SECTION
    _cs_cache: dict = field(default_factory=dict, repr=False)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[-1]

    @property
    def n_assets(self) -> int:
        return self.inputs.shape[0]

    def cross_section(self, day: int) -> np.ndarray:
        """Asset indices with both a valid window and a valid forward return."""
        ix = self._cs_cache.get(day)
        if ix is None:
            ix = np.flatnonzero(self.valid[:, day] & self.returns.valid[:, day])
            self._cs_cache[day] = ix
        return ix

    def eligible_days(self, split: str) -> list[int]:
        return [t for t in self.splits[split] if len(self.cross_section(t)) >= self.min_cross_section]


def window_index(field_name: str, lag: int, window_len: int = 30) -> int:
    """Input coordinate of ``field_name`` observed ``lag`` days before the sample day."""
    return FIELDS.index(field_name) * window_len + (window_len - 1 - lag)


def build_windows(panel: OhlcvPanel, window_len: int = 30, splits=DEFAULT_SPLITS,
                  horizon: int = 5, min_cross_section: int = MIN_CROSS_SECTION) -> WindowDataset:
    need = required_days(window_len, splits, horizon)
    if panel.n_days < need:
        raise ValueError(f"panel has {panel.n_days} days; need >= {need} "
                         f"(window {window_len} + splits {sum(splits)} + horizon {horizon})")
    n_assets, n_days = panel.n_assets, panel.n_days
    dim = window_len * len(FIELDS)
    raw = np.full((n_assets, n_days, dim), np.nan)
    # (A, D - w + 1, F, w): windows ending at each day t >= w - 1
    win = np.lib.stride_tricks.sliding_window_view(panel.values, window_len, axis=1)
    raw[:, window_len - 1:] = win.reshape(n_assets, n_days - window_len + 1, dim)
    trad = np.lib.stride_tricks.sliding_window_view(panel.tradable, window_len, axis=1)
    valid = np.zeros((n_assets, n_days), dtype=bool)
    valid[:, window_len - 1:] = trad.all(axis=-1)

    ranges = split_ranges(window_len, splits)
    train_mask = np.zeros(n_days, dtype=bool)
    train_mask[ranges["train"].start:ranges["train"].stop] = True
    train = raw[valid & train_mask[None, :]]
    if len(train) == 0:
        raise ValueError("no valid training windows")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    inputs = (raw - mean) / std
    inputs[~valid] = np.nan
    return WindowDataset(window_len, _readonly(inputs), _readonly(valid), _readonly(mean),
                         _readonly(std), ranges, forward_return(panel, horizon), min_cross_section)


@dataclass(frozen=True, eq=False)
class CrossSectionBatch:
    day_indices: tuple[int, ...]
    assets: tuple[np.ndarray, ...]
    inputs: tuple[np.ndarray, ...]
    returns: tuple[np.ndarray, ...]


def batch_for_days(ds: WindowDataset, days) -> CrossSectionBatch:
    assets, inputs, rets = [], [], []
    for t in days:
        ix = ds.cross_section(t)
        assets.append(ix)
        inputs.append(ds.inputs[ix, t])
        rets.append(ds.returns.values[ix, t])
    return CrossSectionBatch(tuple(int(t) for t in days), tuple(assets), tuple(inputs), tuple(rets))


def sample_batch(ds: WindowDataset, split: str, n_days: int, rng: np.random.Generator) -> CrossSectionBatch:
    """Draw ``n_days`` distinct eligible days of ``split`` with their full cross-sections."""
    eligible = ds.eligible_days(split)
    if len(eligible) < n_days:
        raise ValueError(f"split {split!r} has {len(eligible)} eligible days "
                         f"(>= {ds.min_cross_section} assets); {n_days} requested")
    days = np.sort(rng.choice(np.asarray(eligible), size=n_days, replace=False))
    return batch_for_days(ds, days)


def write_feature_table(features, panel: OhlcvPanel, path: str | Path) -> None:
    """Wide ``date,asset_id,<name>...`` file; invalid cells are left empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset_id", *(f.name for f in features)])
        for t, day in enumerate(panel.days):
            for a, asset in enumerate(panel.assets):
                cells = [repr(float(f.values[a, t])) if f.valid[a, t] else "" for f in features]
                if any(cells):
                    w.writerow([day, asset, *cells])


def read_feature_table(path: str | Path, panel: OhlcvPanel) -> list[FeaturePanel]:
    """Inverse of ``write_feature_table`` on ``panel``'s grid."""
    day_ix = {d: i for i, d in enumerate(panel.days)}
    asset_ix = {a: i for i, a in enumerate(panel.assets)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or [h.strip() for h in header[:2]] != ["date", "asset_id"]:
            raise PanelFormatError("expected header date,asset_id,<feature>...", 1)
        names = [h.strip() for h in header[2:]]
        values = np.full((len(names), panel.n_assets, panel.n_days), np.nan)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"expected {len(header)} columns", lineno)
            d, a = row[0].strip(), row[1].strip()
            if d not in day_ix or a not in asset_ix:
                raise PanelFormatError(f"({d}, {a}) not in panel", lineno)
            for k, cell in enumerate(row[2:]):
                if cell.strip():
                    try:
                        values[k, asset_ix[a], day_ix[d]] = float(cell)
                    except ValueError:
                        raise PanelFormatError("non-numeric value", lineno) from None
    return [FeaturePanel(n, v, np.isfinite(v)) for n, v in zip(names, values)]
