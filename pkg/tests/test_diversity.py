from __future__ import annotations

import numpy as np
import pytest

from alphalab import dsl
from alphalab.diversity import (
    METRICS,
    daily_softmax,
    default_k,
    distance,
    distance_matrix,
    diversity_score,
    kmeans_centers,
    pairwise_distance,
)
from alphalab.market_data import FeaturePanel


def panel_of(values: np.ndarray, name: str = "f") -> FeaturePanel:
    values = np.asarray(values, dtype=float)
    return FeaturePanel(name, values, np.isfinite(values))


def random_dsl_features(panel, days, m: int, seed: int) -> list[FeaturePanel]:
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < m:
        e = dsl.random_expr(rng, 4)
        if e.lookback > 29:
            continue
        f = dsl.evaluate_panel(e, panel)
        out.append(FeaturePanel(f"r{len(out)}", f.values, f.valid))
    return out


# softmax

def test_softmax_examples():
    n = 7
    const = panel_of(np.full((n, 2), 3.0))
    np.testing.assert_allclose(daily_softmax(const, 0), np.full(n, 1 / n), rtol=1e-15)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((n, 2))
    np.testing.assert_allclose(daily_softmax(panel_of(v), 1), daily_softmax(panel_of(v + 10), 1), rtol=1e-12)
    v[3, 0] += 50
    assert daily_softmax(panel_of(v), 0)[3] > 0.999


def test_softmax_respects_validity_and_needs_two_assets():
    v = np.array([[1.0], [np.nan], [2.0]])
    np.testing.assert_allclose(daily_softmax(panel_of(v), 0).sum(), 1.0)
    assert len(daily_softmax(panel_of(v), 0)) == 2
    with pytest.raises(ValueError):
        daily_softmax(panel_of(np.array([[1.0], [np.nan]])), 0)


# distances

def test_scalar_oracle():
    p, q = np.array([0.5, 0.5]), np.array([0.9, 0.1])
    assert distance(p, q, "euclidean") == pytest.approx(np.sqrt(0.32), rel=1e-12)
    kl_pq = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
    kl_qp = 0.9 * np.log(0.9 / 0.5) + 0.1 * np.log(0.1 / 0.5)
    assert distance(p, q, "cross_entropy") == pytest.approx(0.5 * (kl_pq + kl_qp), rel=1e-12)
    assert distance(p, q, "one_minus_cos") == pytest.approx(1 - 0.5 / np.sqrt(0.5 * 0.82), rel=1e-12)
    assert distance(p, q, "one_minus_corr") == 1.0


@pytest.mark.parametrize("metric", METRICS)
def test_metric_axioms(metric):
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        d = distance(p, q, metric)
        assert d >= 0
        assert d == pytest.approx(distance(q, p, metric), rel=1e-12, abs=1e-15)
        assert distance(p, p, metric) == pytest.approx(0.0, abs=1e-12)


def test_raw_cross_entropy_self_value_is_entropy():
    for n in (2, 10, 100):
        u = np.full(n, 1 / n)
        assert distance(u, u, "cross_entropy", raw_cross_entropy=True) == pytest.approx(np.log(n), rel=1e-14)
    rng = np.random.default_rng(2)
    p, q = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
    h_p = -(p * np.log(p)).sum()
    assert distance(p, p, "cross_entropy", raw_cross_entropy=True) == pytest.approx(h_p, rel=1e-12)
    # Gibbs: mixed value exceeds the mean of the two entropies
    h_q = -(q * np.log(q)).sum()
    assert distance(p, q, "cross_entropy", raw_cross_entropy=True) > 0.5 * (h_p + h_q)
    m = distance_matrix(np.stack([p, q]), "cross_entropy", raw_cross_entropy=True)
    assert m[0, 0] == pytest.approx(h_p) and m[1, 1] == pytest.approx(h_q)


def test_log_floor_keeps_underflow_finite():
    p = np.array([1.0, 0.0])
    q = np.array([0.0, 1.0])
    assert np.isfinite(distance(p, q, "cross_entropy"))


def test_unknown_metric():
    with pytest.raises(ValueError, match="unknown metric"):
        distance(np.ones(2), np.ones(2), "manhattan")


def test_identical_features_give_zero_matrix():
    rng = np.random.default_rng(3)
    f = panel_of(rng.standard_normal((20, 5)))
    for metric in METRICS:
        assert np.abs(pairwise_distance([f, f, f], range(5), metric)).max() < 1e-12


# k-means

def test_kmeans_single_center_is_mean():
    x = np.random.default_rng(4).standard_normal((30, 6))
    res = kmeans_centers(x, 1, np.random.default_rng(0))
    np.testing.assert_allclose(res.centers[0], x.mean(axis=0), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_recovers_separated_blobs(seed):
    rng = np.random.default_rng(100 + seed)
    x = np.concatenate([rng.normal(0, 0.1, (20, 3)), rng.normal(5, 0.1, (15, 3))])
    truth = np.r_[np.zeros(20, int), np.ones(15, int)]
    lab = kmeans_centers(x, 2, np.random.default_rng(seed)).labels
    assert (lab == truth).all() or (lab == 1 - truth).all()


def test_kmeans_sse_monotone_and_deterministic():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.standard_normal((60, 4))
        res = kmeans_centers(x, 6, np.random.default_rng(7))
        assert all(b <= a + 1e-12 for a, b in zip(res.sse_history, res.sse_history[1:]))
        again = kmeans_centers(x, 6, np.random.default_rng(7))
        np.testing.assert_array_equal(res.labels, again.labels)


def test_kmeans_k_bounds():
    x = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kmeans_centers(x, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        kmeans_centers(x, 0, np.random.default_rng(0))
    assert kmeans_centers(x, 3, np.random.default_rng(0)).centers.shape == (3, 2)


def test_default_k():
    assert default_k(100) == 10
    assert default_k(20) == 2
    assert default_k(3) == 2
    assert default_k(2, 0.5) == 2


# diversity score

def test_copies_score_zero(synth0, ds0):
    f = dsl.classical_feature("momentum_5", synth0.panel)
    rep = diversity_score([f] * 10, ds0.splits["test"])
    assert (rep.scores == 0).all() and rep.k == 2


def test_score_invariant_to_daily_shift():
    rng = np.random.default_rng(6)
    feats = [panel_of(rng.standard_normal((15, 4)), f"f{i}") for i in range(6)]
    shift = rng.standard_normal(4)
    shifted = [panel_of(f.values + shift[None, :], f.name) for f in feats]
    a = diversity_score(feats, range(4), k=3, seed=1)
    b = diversity_score(shifted, range(4), k=3, seed=1)
    np.testing.assert_allclose(a.scores, b.scores, rtol=1e-9)


def test_score_uses_common_valid_assets():
    rng = np.random.default_rng(7)
    v = rng.standard_normal((12, 3))
    w = v.copy()
    w[0, :] = np.nan
    rep = diversity_score([panel_of(v, "a"), panel_of(w, "b")], range(3), k=2)
    assert np.abs(rep.scores).max() < 1e-12


def test_k_fraction_stability(synth0, ds0):
    days = ds0.splits["test"]
    feats = random_dsl_features(synth0.panel, days, 100, seed=0)
    a = diversity_score(feats, days, k=5).mean
    b = diversity_score(feats, days, k=15).mean
    assert abs(a - b) / max(a, b) <= 0.25


def test_score_errors():
    f = panel_of(np.ones((4, 2)))
    with pytest.raises(ValueError):
        diversity_score([f], range(2))
    with pytest.raises(ValueError):
        diversity_score([f, f], range(2), metric="bogus")
