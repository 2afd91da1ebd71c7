"""Scheme orchestration (GP only, GP-taught networks, randomly-taught networks),
IC reports, and a long-only top-decile backtest."""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import adnn
from .adnn import KernelParams, MlpNetwork, TrainConfig
from .dsl import evaluate_panel
from .diversity import DEFAULT_METRIC, DiversityReport, default_k, diversity_score
from .gp import GpConfig, run_gp
from .ic import feature_ic, rank01
from .market_data import FIELDS, FeaturePanel, ForwardReturns, OhlcvPanel, WindowDataset

log = logging.getLogger(__name__)

SCHEMES = ("A", "B", "C")
GOOD_IC = 0.05


def derive_seed(root: int, *names: str | int) -> np.random.SeedSequence:
    """Independent stream for a named component under one root seed."""
    keys = [n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names]
    return np.random.SeedSequence([root, *keys])


def derive_int(root: int, *names: str | int) -> int:
    return int(derive_seed(root, *names).generate_state(1)[0])


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "A"
    n_features: int = 20
    gp: GpConfig = GpConfig()
    train: TrainConfig = TrainConfig()
    kernel: KernelParams = KernelParams()
    metric: str = DEFAULT_METRIC
    k_fraction: float = 0.10
    seed: int = 0
    workers: int = 1
    raw_cross_entropy: bool = False

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme={self.scheme!r} must be one of {SCHEMES}")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 < self.k_fraction <= 1:
            raise ValueError("k_fraction must lie in (0, 1]")
        self.gp.validate()
        self.train.validate()


@dataclass
class FeatureRow:
    feature_id: str
    train_ic: float
    val_ic: float
    test_ic: float
    detail: str = ""

    @property
    def good(self) -> bool:
        return self.test_ic >= GOOD_IC


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    return (float(v.mean()), float(v.std())) if len(v) else (float("nan"), float("nan"))


@dataclass
class EvalReport:
    scheme: str
    rows: list[FeatureRow]
    diversity: DiversityReport | None = None
    seconds: float = 0.0
    failures: int = 0

    def ic(self, split: str = "test") -> tuple[float, float]:
        return _mean_std(getattr(r, f"{split}_ic") for r in self.rows)

    @property
    def n_good(self) -> int:
        return sum(r.good for r in self.rows)


@dataclass
class NetworkOutcome:
    index: int
    feature: FeaturePanel
    row: FeatureRow
    contributions: list[np.ndarray] = field(default_factory=list)
    network: MlpNetwork | None = None


@dataclass
class SchemeResult:
    report: EvalReport
    features: list[FeaturePanel]
    networks: list[NetworkOutcome] = field(default_factory=list)


def split_ics(feature: FeaturePanel, ds: WindowDataset) -> tuple[float, float, float]:
    return tuple(feature_ic(feature, ds.returns, ds.splits[s], ds.min_cross_section, universe=ds.valid).mean
                 for s in ("train", "val", "test"))


# ---------------------------------------------------------------------------
# Network schemes; the shared read-only context is inherited by forked workers

_CONTEXT: dict = {}


def _train_one(job: tuple[int, int | None]) -> NetworkOutcome:
    index, teacher_ix = job
    cfg: SchemeConfig = _CONTEXT["cfg"]
    ds: WindowDataset = _CONTEXT["ds"]
    teachers: list[FeaturePanel] = _CONTEXT["teachers"]
    rng = np.random.default_rng(derive_seed(cfg.seed, "network", cfg.scheme, index))
    tc = cfg.train
    net = MlpNetwork.init((ds.input_dim, *tc.hidden, 1), rng)
    if teacher_ix is None:
        pre = adnn.pretrain(net, adnn.random_teacher(ds, rng), ds, tc, rng, max_epochs=tc.random_pretrain_epochs)
        detail = "teacher=random"
    else:
        pre = adnn.pretrain(net, teachers[teacher_ix], ds, tc, rng)
        detail = f"teacher={teachers[teacher_ix].name} fidelity={pre.fidelity:.4f}"
    best, hist = adnn.train(net, ds, tc, rng, cfg.kernel)
    name = f"{cfg.scheme.lower()}_{index:03d}"
    feat = adnn.predict(best, ds, name=name)
    row = FeatureRow(name, *split_ics(feat, ds), detail=f"{detail} epochs={len(hist.val_ic)}")
    return NetworkOutcome(index, feat, row, hist.contributions, best)


def _run_networks(cfg: SchemeConfig, ds: WindowDataset, teachers: Sequence[FeaturePanel]) -> tuple[list[NetworkOutcome], int]:
    if cfg.scheme == "B":
        if not teachers:
            raise ValueError("scheme B needs at least one teacher feature")
        jobs = [(i, i % len(teachers)) for i in range(cfg.n_features)]
    else:
        jobs = [(i, None) for i in range(cfg.n_features)]
    _CONTEXT.update(cfg=cfg, ds=ds, teachers=list(teachers))
    outcomes, failures = [], 0
    try:
        if cfg.workers == 1:
            for job in jobs:
                try:
                    outcomes.append(_train_one(job))
                except (adnn.TrainingError, ValueError, FloatingPointError) as exc:
                    failures += 1
                    log.warning("feature %d failed: %s", job[0], exc)
        else:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(cfg.workers, mp_context=ctx) as pool:
                futures = [pool.submit(_train_one, job) for job in jobs]
                for job, fut in zip(jobs, futures):
                    try:
                        outcomes.append(fut.result())
                    except (adnn.TrainingError, ValueError, FloatingPointError) as exc:
                        failures += 1
                        log.warning("feature %d failed: %s", job[0], exc)
    finally:
        _CONTEXT.clear()
    return outcomes, failures


def run_scheme(cfg: SchemeConfig, panel: OhlcvPanel, ds: WindowDataset,
               teachers: Sequence[FeaturePanel] = ()) -> SchemeResult:
    """Build ``n_features`` features with one scheme and score them.

    A: top GP expressions by validation IC. B: one network per GP teacher,
    assigned round-robin in the given order. C: networks pretrained on
    random targets.
    """
    cfg.validate()
    start = time.perf_counter()
    networks: list[NetworkOutcome] = []
    failures = 0
    if cfg.scheme == "A":
        gp_cfg = replace(cfg.gp, seed=derive_int(cfg.seed, "gp"))
        result = run_gp(gp_cfg, ds, panel, m=cfg.n_features)
        features, rows = [], []
        for i, ind in enumerate(result.individuals):
            name = f"gp_{i:03d}"
            feat = evaluate_panel(ind.expr, panel, name)
            features.append(feat)
            rows.append(FeatureRow(name, ind.train_fitness, ind.val_fitness, ind.test_fitness, ind.rpn))
    else:
        networks, failures = _run_networks(cfg, ds, teachers)
        features = [n.feature for n in networks]
        rows = [n.row for n in networks]
    report = EvalReport(cfg.scheme, rows, failures=failures)
    if len(features) >= 2:
        k = default_k(len(features), cfg.k_fraction)
        report.diversity = diversity_score(features, ds.splits["test"], cfg.metric, k,
                                           seed=derive_int(cfg.seed, "diversity"),
                                           raw_cross_entropy=cfg.raw_cross_entropy)
    report.seconds = time.perf_counter() - start
    return SchemeResult(report, features, networks)


def sort_teachers(features: Sequence[FeaturePanel], ds: WindowDataset) -> list[FeaturePanel]:
    """Teachers ordered by validation IC, best first (ties by name)."""
    scored = [(feature_ic(f, ds.returns, ds.splits["val"], ds.min_cross_section, universe=ds.valid).mean, f.name, f)
              for f in features]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return [s[2] for s in scored]


# ---------------------------------------------------------------------------
# Backtest

class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestResult:
    period_starts: np.ndarray
    portfolio: np.ndarray
    benchmark: np.ndarray
    holdings: tuple[np.ndarray, ...]
    holding_period: int = 5

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumprod(1.0 + self.portfolio) - 1.0

    @property
    def benchmark_cumulative(self) -> np.ndarray:
        return np.cumprod(1.0 + self.benchmark) - 1.0


def composite_score(features: Sequence[FeaturePanel], day: int) -> tuple[np.ndarray, np.ndarray]:
    """Assets valid for every feature and the mean of their per-feature rank01."""
    ix = np.flatnonzero(np.logical_and.reduce([f.valid[:, day] for f in features]))
    if len(ix) == 0:
        return ix, np.zeros(0)
    return ix, np.mean([rank01(f.values[ix, day]) for f in features], axis=0)


def backtest_top_decile(features: Sequence[FeaturePanel], panel: OhlcvPanel, returns: ForwardReturns,
                        days, fraction: float = 0.10, min_assets: int = 10) -> BacktestResult:
    """Long the equal-weighted top decile of the composite score, rebalanced every horizon.

    Rebalance days are the first day of ``days`` and every ``returns.horizon``
    days after it, while the holding period ends inside the return panel.
    The universe on a rebalance day is every asset with all features valid
    and a tradable close. A holding without a valid exit price contributes
    a zero return. Ties are broken by asset order.
    """
    if not features:
        raise BacktestError("backtest needs at least one feature")
    days = list(days)
    h = returns.horizon
    starts, port, bench, held = [], [], [], []
    for t in days[::h]:
        if t + h >= panel.n_days:
            break
        ix, score = composite_score(features, t)
        ix_ok = panel.tradable[ix, t]
        ix, score = ix[ix_ok], score[ix_ok]
        if len(ix) < min_assets:
            raise BacktestError(f"rebalance day {panel.days[t]}: {len(ix)} tradable assets < {min_assets}")
        n_long = math.ceil(fraction * len(ix))
        order = np.lexsort((ix, -score))
        top = ix[order[:n_long]]
        r = np.where(returns.valid[ix, t], returns.values[ix, t], 0.0)
        r_top = np.where(returns.valid[top, t], returns.values[top, t], 0.0)
        starts.append(t)
        port.append(float(r_top.mean()))
        bench.append(float(r.mean()))
        held.append(top)
    return BacktestResult(np.asarray(starts, dtype=int), np.asarray(port), np.asarray(bench), tuple(held), h)


# ---------------------------------------------------------------------------
# Report files

def _fmt(x: float) -> str:
    return repr(float(x))


def write_scheme_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "feature_id", "train_ic", "val_ic", "test_ic", "good_flag", "detail"])
        for r in report.rows:
            w.writerow([report.scheme, r.feature_id, _fmt(r.train_ic), _fmt(r.val_ic), _fmt(r.test_ic),
                        int(r.good), r.detail])


def read_scheme_report(path: str | Path) -> EvalReport:
    rows, scheme = [], ""
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            scheme = rec["scheme"]
            rows.append(FeatureRow(rec["feature_id"], float(rec["train_ic"]), float(rec["val_ic"]),
                                   float(rec["test_ic"]), rec.get("detail", "")))
    return EvalReport(scheme, rows)


def write_diversity_report(report: DiversityReport, path: str | Path, days_labels: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k", "day", "score"])
        for t, s in zip(report.days, report.scores):
            w.writerow([report.metric, report.k, days_labels[t], _fmt(s)])
        w.writerow([report.metric, report.k, "mean", _fmt(report.mean)])
        w.writerow([report.metric, report.k, "std", _fmt(report.std)])


def write_contrib_trace(networks: Sequence[NetworkOutcome], path: str | Path, window_len: int) -> None:
    lags = [window_len - 1 - (j % window_len) for j in range(len(FIELDS) * window_len)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "epoch", "input_index", "field", "lag", "value"])
        for net in networks:
            for epoch, snap in enumerate(net.contributions):
                for j, v in enumerate(snap):
                    w.writerow([net.row.feature_id, epoch, j, FIELDS[j // window_len], lags[j], _fmt(v)])


def write_backtest(result: BacktestResult, path: str | Path, days_labels: Sequence[str]) -> None:
    cum, bcum = result.cumulative, result.benchmark_cumulative
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period_start", "portfolio_return", "benchmark_return", "cumulative", "benchmark_cumulative"])
        for i, t in enumerate(result.period_starts):
            w.writerow([days_labels[t], _fmt(result.portfolio[i]), _fmt(result.benchmark[i]),
                        _fmt(cum[i]), _fmt(bcum[i])])


def format_summary(reports: Sequence[EvalReport], with_time: bool = False) -> str:
    """Plain-text comparison table with test IC, test diversity and optional time."""
    head = f"{'Scheme':<8}{'Features':>9}{'Test IC':>22}{'Test Diversity':>24}{'Good':>6}{'Failed':>8}"
    if with_time:
        head += f"{'Time (s)':>11}"
    lines = [head, "-" * len(head)]
    for rep in reports:
        m, s = rep.ic("test")
        div = "n/a" if rep.diversity is None else f"{rep.diversity.mean:.4f} +/- {rep.diversity.std:.4f}"
        line = f"{rep.scheme:<8}{len(rep.rows):>9}{f'{m:.4f} +/- {s:.4f}':>22}{div:>24}{rep.n_good:>6}{rep.failures:>8}"
        if with_time:
            line += f"{rep.seconds:>11.1f}"
        lines.append(line)
    return "\n".join(lines) + "\n"
