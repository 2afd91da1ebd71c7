"""Exact Spearman rank correlation and information-coefficient series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .market_data import MIN_CROSS_SECTION, FeaturePanel, ForwardReturns


def rank01(x: np.ndarray) -> np.ndarray:
    """Average-tie ranks mapped linearly onto [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 1:
        return np.full(1, 0.5)
    return (rankdata(x) - 1.0) / (n - 1.0)


def _pearson_centered(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        return np.nan
    return float(np.clip((a @ b) / np.sqrt(saa * sbb), -1.0, 1.0))


def spearman_exact(x, y, *, with_flag: bool = False):
    """Pearson correlation of average-tie ranks.

    Returns 0.0 (and ``degenerate=True`` when ``with_flag``) if either side
    is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    rho = _pearson_centered(rankdata(x), rankdata(y))
    degenerate = np.isnan(rho)
    value = 0.0 if degenerate else rho
    return (value, bool(degenerate)) if with_flag else value


def daily_spearman(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise Spearman over the rows selected by ``mask``.

    ``x``, ``y`` and ``mask`` are (n_assets, n_days). Returns per-day
    correlations (0 where degenerate) and the degenerate flags.
    """
    xm = np.where(mask, x, np.nan)
    ym = np.where(mask, y, np.nan)
    rx = rankdata(xm, axis=0, nan_policy="omit")
    ry = rankdata(ym, axis=0, nan_policy="omit")
    n = mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rx = rx - np.nansum(rx, axis=0) / n
        ry = ry - np.nansum(ry, axis=0) / n
        sxy = np.nansum(rx * ry, axis=0)
        sxx = np.nansum(rx * rx, axis=0)
        syy = np.nansum(ry * ry, axis=0)
        rho = sxy / np.sqrt(sxx * syy)
    degenerate = (sxx == 0) | (syy == 0) | (n < 2)
    rho = np.where(degenerate, 0.0, np.clip(rho, -1.0, 1.0))
    return rho, degenerate


@dataclass(frozen=True)
class ICResult:
    days: np.ndarray
    series: np.ndarray
    degenerate: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.series.mean()) if len(self.series) else 0.0

    @property
    def std(self) -> float:
        return float(self.series.std()) if len(self.series) else 0.0

    @property
    def all_degenerate(self) -> bool:
        return bool(len(self.degenerate) and self.degenerate.all())


def feature_ic(feature: FeaturePanel, returns: ForwardReturns, days, min_cross_section: int = MIN_CROSS_SECTION,
               universe: np.ndarray | None = None) -> ICResult:
    """Per-day exact Spearman of ``feature`` against forward returns.

    The cross-section of a day is every asset where the feature and the
    return are both valid (and inside ``universe`` when given). Days with
    fewer than ``min_cross_section`` such assets are skipped.
    """
    days = np.asarray(list(days), dtype=int)
    mask = feature.valid[:, days] & returns.valid[:, days]
    if universe is not None:
        mask &= universe[:, days]
    keep = mask.sum(axis=0) >= min_cross_section
    days, mask = days[keep], mask[:, keep]
    rho, degenerate = daily_spearman(feature.values[:, days], returns.values[:, days], mask)
    return ICResult(days, rho, degenerate)
