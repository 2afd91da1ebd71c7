"""Feature-set diversity: per-day softmax, pairwise distances, k-means, center spread."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .market_data import FeaturePanel

METRICS = ("euclidean", "cross_entropy", "one_minus_cos", "one_minus_corr")
DEFAULT_METRIC = "cross_entropy"
LOG_FLOOR = 1e-12


def daily_softmax(feature: FeaturePanel, day: int, assets: np.ndarray | None = None) -> np.ndarray:
    """Softmax of the feature's cross-section on ``day`` (valid assets or ``assets``)."""
    ix = np.flatnonzero(feature.valid[:, day]) if assets is None else np.asarray(assets)
    if len(ix) < 2:
        raise ValueError(f"day {day}: need at least 2 valid assets for a distribution, got {len(ix)}")
    x = feature.values[ix, day]
    if not np.isfinite(x).all():
        raise ValueError(f"day {day}: feature {feature.name!r} is invalid on a requested asset")
    return softmax(x)


def _xlogy_floor(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p * np.log(np.maximum(q, LOG_FLOOR))


def distance(p: np.ndarray, q: np.ndarray, metric: str = DEFAULT_METRIC, raw_cross_entropy: bool = False) -> float:
    """Distance between two distributions (or any two equal-length vectors)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if metric == "euclidean":
        return float(np.sqrt(((p - q) ** 2).sum()))
    if metric == "cross_entropy":
        if raw_cross_entropy:
            return float(-0.5 * (_xlogy_floor(p, q).sum() + _xlogy_floor(q, p).sum()))
        lp = np.log(np.maximum(p, LOG_FLOOR))
        lq = np.log(np.maximum(q, LOG_FLOOR))
        return float(max(0.5 * ((p - q) * (lp - lq)).sum(), 0.0))
    if metric == "one_minus_cos":
        den = np.sqrt((p @ p) * (q @ q))
        return float(max(1.0 - p @ q / den, 0.0)) if den > 0 else 1.0
    if metric == "one_minus_corr":
        pc, qc = p - p.mean(), q - q.mean()
        den = np.sqrt((pc @ pc) * (qc @ qc))
        if den == 0:
            return 0.0 if np.array_equal(p, q) else 1.0
        return float(min(max(1.0 - pc @ qc / den, 0.0), 2.0))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def distance_matrix(vectors: np.ndarray, metric: str = DEFAULT_METRIC, raw_cross_entropy: bool = False) -> np.ndarray:
    """Symmetric (m, m) matrix of ``distance`` between the rows of ``vectors``."""
    m = len(vectors)
    out = np.zeros((m, m))
    for i in range(m):
        if raw_cross_entropy and metric == "cross_entropy":
            out[i, i] = distance(vectors[i], vectors[i], metric, True)
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = distance(vectors[i], vectors[j], metric, raw_cross_entropy)
    return out


def common_assets(features: Sequence[FeaturePanel], day: int) -> np.ndarray:
    mask = np.logical_and.reduce([f.valid[:, day] for f in features])
    return np.flatnonzero(mask)


def pairwise_distance(features: Sequence[FeaturePanel], days, metric: str = DEFAULT_METRIC,
                      raw_cross_entropy: bool = False) -> np.ndarray:
    """Day-averaged pairwise distance matrix between the features' daily softmaxes."""
    if len(features) < 2:
        raise ValueError("need at least 2 features")
    days = list(days)
    total = np.zeros((len(features), len(features)))
    for t in days:
        ix = common_assets(features, t)
        dist = np.stack([daily_softmax(f, t, ix) for f in features])
        total += distance_matrix(dist, metric, raw_cross_entropy)
    return total / len(days)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    sse_history: list[float] = field(default_factory=list)
    iterations: int = 0


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans_centers(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding under squared Euclidean distance."""
    x = np.asarray(x, dtype=np.float64)
    m = len(x)
    if not 1 <= k <= m:
        raise ValueError(f"k={k} must lie in [1, {m}]")
    centers = [x[rng.integers(m)]]
    for _ in range(1, k):
        d2 = _sq_dist(x, np.asarray(centers)).min(axis=1)
        tot = d2.sum()
        # all points coincide with a center: fall back to a uniform draw
        pick = rng.integers(m) if tot == 0 else rng.choice(m, p=d2 / tot)
        centers.append(x[pick])
    centers = np.array(centers)
    labels = _sq_dist(x, centers).argmin(axis=1)
    history = [float(_sq_dist(x, centers)[np.arange(m), labels].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
        d = _sq_dist(x, centers)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(m), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return KMeansResult(centers, labels, history, it)


def default_k(m: int, fraction: float = 0.10) -> int:
    return min(m, max(2, int(round(fraction * m))))


@dataclass(frozen=True)
class DiversityReport:
    metric: str
    k: int
    days: np.ndarray
    scores: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.scores.mean())

    @property
    def std(self) -> float:
        return float(self.scores.std())


def diversity_score(features: Sequence[FeaturePanel], days, metric: str = DEFAULT_METRIC,
                    k: int | None = None, seed: int = 0, raw_cross_entropy: bool = False) -> DiversityReport:
    """Per-day mean pairwise distance between the k-means centers of the softmaxed features."""
    m = len(features)
    if m < 2:
        raise ValueError("diversity needs at least 2 features")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    k = default_k(m) if k is None else k
    days = np.asarray(list(days), dtype=int)
    scores = np.zeros(len(days))
    for n, t in enumerate(days):
        ix = common_assets(features, t)
        dist = np.stack([daily_softmax(f, t, ix) for f in features])
        res = kmeans_centers(dist, k, np.random.default_rng([seed, int(t)]))
        if k > 1:
            dm = distance_matrix(res.centers, metric, raw_cross_entropy)
            scores[n] = dm[np.triu_indices(k, 1)].mean()
    return DiversityReport(metric, k, days, scores)
