"""Synthetic OHLCV panels with a planted, known-good feature.

Two generating modes share everything except how closes evolve.

``daily`` (default): each asset's daily idiosyncratic log-return is

    base_vol * signal_beta * z_{t-1} + vol_i * noise_sigma * eps_t

where ``z_{t-1}`` is yesterday's cross-sectional z-score of the planted
classical feature and ``eps`` is i.i.d. standard normal. The noise scale
``vol_i`` is ``base_vol`` times a per-asset log-normal factor with log-sd
``vol_dispersion``. Daily returns look
like an ordinary random walk; the horizon return accumulates the signal of
several consecutive days.

``exact``: the horizon log-return itself is set,

    log(close[t+h] / close[t]) = m_t + sqrt(h) * (base_vol * signal_beta * z_t + vol_i * noise_sigma * eps_t)

so forward-return ranks follow ``signal_beta * z + noise`` exactly. The h
interleaved close chains drift apart, which makes 1-day returns unrealistic.

A common market shock is added in both modes; it cannot affect
cross-sectional ranks. The planted feature is always evaluated on the
prices generated so far, so the signal is causal and the oracle feature is
an ordinary DSL expression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import classical_expr, eval_tree, evaluate_panel
from .ic import ICResult, feature_ic
from .market_data import (
    DEFAULT_SPLITS,
    MIN_CROSS_SECTION,
    FeaturePanel,
    OhlcvPanel,
    forward_return,
    required_days,
)


MODES = ("daily", "exact")


@dataclass(frozen=True)
class SynthConfig:
    n_assets: int = 100
    n_days: int = 345
    seed: int = 0
    planted_feature: str = "momentum_5"
    signal_beta: float = 0.6
    noise_sigma: float = 1.0
    base_vol: float = 0.02
    vol_dispersion: float = 0.5
    window_len: int = 30
    horizon: int = 5
    splits: tuple[int, int, int] = DEFAULT_SPLITS
    start_date: str = "2018-01-02"
    mode: str = "daily"

    def validate(self) -> None:
        need = required_days(self.window_len, self.splits, self.horizon)
        if self.n_days < need:
            raise ValueError(f"n_days={self.n_days} must be >= {need} "
                             f"(window_len + sum(splits) + horizon)")
        if self.n_assets < 2:
            raise ValueError(f"n_assets={self.n_assets} must be >= 2")
        if not self.signal_beta >= 0:
            raise ValueError(f"signal_beta={self.signal_beta} must be >= 0")
        if not self.noise_sigma > 0:
            raise ValueError(f"noise_sigma={self.noise_sigma} must be > 0")
        if not self.base_vol > 0:
            raise ValueError(f"base_vol={self.base_vol} must be > 0")
        if not self.vol_dispersion >= 0:
            raise ValueError(f"vol_dispersion={self.vol_dispersion} must be >= 0")
        if self.seed < 0:
            raise ValueError(f"seed={self.seed} must be unsigned")
        if self.mode not in MODES:
            raise ValueError(f"mode={self.mode!r} must be one of {MODES}")
        classical_expr(self.planted_feature)


@dataclass(frozen=True, eq=False)
class SynthResult:
    panel: OhlcvPanel
    oracle: FeaturePanel
    oracle_ic: ICResult

    @property
    def oracle_ic_mean(self) -> float:
        return self.oracle_ic.mean

    def oracle_ic_on(self, days) -> float:
        keep = np.isin(self.oracle_ic.days, np.asarray(list(days)))
        return float(self.oracle_ic.series[keep].mean())


def trading_days(start: str, n: int) -> tuple[str, ...]:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return tuple(str(d) for d in np.busday_offset(first, np.arange(n)))


def _zscore(x: np.ndarray) -> np.ndarray:
    s = x.std()
    return np.zeros_like(x) if s == 0 else (x - x.mean()) / s


def generate_synthetic_panel(cfg: SynthConfig) -> SynthResult:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    A, D = cfg.n_assets, cfg.n_days
    days = trading_days(cfg.start_date, D)
    assets = tuple(f"A{i:04d}" for i in range(A))
    planted = classical_expr(cfg.planted_feature)
    lookback = planted.lookback

    # Draw every random stream up front so the sequence is fixed by the seed.
    log_close0 = np.log(20.0) + 0.25 * rng.standard_normal(A)
    market = 0.5 * cfg.base_vol * rng.standard_normal(D)
    eps = rng.standard_normal((A, D))
    gap = rng.standard_normal((A, D))
    wick_hi = rng.standard_normal((A, D))
    wick_lo = rng.standard_normal((A, D))
    vol_mu = np.log(5e4) + 0.5 * rng.standard_normal(A)
    vol_eps = 0.3 * rng.standard_normal((A, D))
    # per-asset volatility level, so realized-volatility features carry persistent structure
    vol = cfg.base_vol * np.exp(cfg.vol_dispersion * rng.standard_normal(A))
    gap *= 0.25 * vol[:, None]
    wick_hi = np.abs(0.5 * vol[:, None] * wick_hi)
    wick_lo = np.abs(0.5 * vol[:, None] * wick_lo)

    h = cfg.horizon
    values = np.empty((A, D, 5))
    tradable = np.ones((A, D), dtype=bool)
    log_close = np.empty((A, D))
    log_close[:, 0] = log_close0
    log_vol = vol_mu.copy()
    z = np.zeros(A)
    for t in range(D):
        # before the planted feature exists each asset is a plain random walk
        live = t > lookback
        noise = cfg.noise_sigma if live else 1.0
        if cfg.mode == "daily":
            if t > 0:
                log_close[:, t] = log_close[:, t - 1] + market[t] + (
                    cfg.base_vol * cfg.signal_beta * z + vol * noise * eps[:, t])
        elif t < h:
            if t > 0:
                log_close[:, t] = log_close[:, t - 1] + market[t] + vol * eps[:, t]
        # exact mode: close[t] was fixed at step t - h
        if t > 0:
            log_vol = vol_mu + 0.8 * (log_vol - vol_mu) + vol_eps[:, t]
        close = np.exp(log_close[:, t])
        open_ = np.exp(log_close[:, max(t - 1, 0)] + gap[:, t])
        values[:, t, 0] = open_
        values[:, t, 1] = np.maximum(open_, close) * np.exp(wick_hi[:, t])
        values[:, t, 2] = np.minimum(open_, close) * np.exp(-wick_lo[:, t])
        values[:, t, 3] = close
        values[:, t, 4] = np.round(np.exp(log_vol))
        if t >= lookback:
            lo = t - lookback
            window = OhlcvPanel(assets, days[lo:t + 1], values[:, lo:t + 1], tradable[:, lo:t + 1])
            z = _zscore(eval_tree(planted, window)[:, -1])
        if cfg.mode == "exact" and t + h < D:
            signal = cfg.base_vol * cfg.signal_beta * z if t >= lookback else 0.0
            log_close[:, t + h] = log_close[:, t] + np.sqrt(h) * (market[t] + signal + vol * noise * eps[:, t])

    panel = OhlcvPanel(assets, days, values, tradable)
    oracle = evaluate_panel(planted, panel, cfg.planted_feature)
    returns = forward_return(panel, cfg.horizon)
    ic = feature_ic(oracle, returns, range(D), MIN_CROSS_SECTION if A >= MIN_CROSS_SECTION else 2)
    return SynthResult(panel, oracle, ic)
