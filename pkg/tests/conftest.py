from __future__ import annotations

import numpy as np
import pytest

from alphalab.market_data import OhlcvPanel, build_windows
from alphalab.synthetic import SynthConfig, generate_synthetic_panel, trading_days


def random_panel(n_assets: int = 30, n_days: int = 60, seed: int = 0, holes: float = 0.0) -> OhlcvPanel:
    """Plain random-walk OHLCV panel, optionally with untradable cells."""
    rng = np.random.default_rng(seed)
    close = 20.0 * np.exp(np.cumsum(0.02 * rng.standard_normal((n_assets, n_days)), axis=1))
    open_ = close * np.exp(0.005 * rng.standard_normal((n_assets, n_days)))
    high = np.maximum(open_, close) * np.exp(np.abs(0.01 * rng.standard_normal((n_assets, n_days))))
    low = np.minimum(open_, close) * np.exp(-np.abs(0.01 * rng.standard_normal((n_assets, n_days))))
    volume = np.round(np.exp(10 + 0.3 * rng.standard_normal((n_assets, n_days))))
    values = np.stack([open_, high, low, close, volume], axis=-1)
    tradable = rng.random((n_assets, n_days)) >= holes
    assets = tuple(f"S{i:03d}" for i in range(n_assets))
    return OhlcvPanel(assets, trading_days("2020-01-01", n_days), values, tradable)


@pytest.fixture(scope="session")
def synth0():
    return generate_synthetic_panel(SynthConfig(seed=0))


@pytest.fixture(scope="session")
def ds0(synth0):
    return build_windows(synth0.panel)


@pytest.fixture
def small_panel():
    return random_panel()


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    # entries that are ~0 in both (e.g. the output-bias gradient, exactly 0 by shift invariance) compare absolutely
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def fd_loss_error(rng: np.random.Generator, n_days: int = 3, n_assets: int = 20, h: float = 1e-5) -> float:
    """Max relative error of the surrogate-loss output gradient against central differences."""
    from alphalab.adnn import surrogate_ic_loss

    outs = [rng.standard_normal(n_assets) for _ in range(n_days)]
    rets = [rng.standard_normal(n_assets) for _ in range(n_days)]
    grads = surrogate_ic_loss(outs, rets).grads
    worst = 0.0
    for d in range(n_days):
        num = np.empty(n_assets)
        for i in range(n_assets):
            up = [o.copy() for o in outs]
            dn = [o.copy() for o in outs]
            up[d][i] += h
            dn[d][i] -= h
            num[i] = (surrogate_ic_loss(up, rets).loss - surrogate_ic_loss(dn, rets).loss) / (2 * h)
        worst = max(worst, rel_error(grads[d], num))
    return worst


def fd_network_error(rng: np.random.Generator, sizes=(5, 3, 1), n_days: int = 2, n_assets: int = 6,
                     h: float = 1e-5) -> float:
    """Max relative error of whole-network parameter gradients against central differences."""
    from alphalab.adnn import MlpNetwork, surrogate_ic_loss

    net = MlpNetwork.init(sizes, rng)
    xs = [rng.standard_normal((n_assets, sizes[0])) for _ in range(n_days)]
    rets = [rng.standard_normal(n_assets) for _ in range(n_days)]

    def loss() -> float:
        return surrogate_ic_loss([net.forward(x) for x in xs], rets).loss

    x = np.concatenate(xs)
    out, acts = net._forward(x)
    res = surrogate_ic_loss(np.split(out, n_days), rets)
    net.backward(acts, np.concatenate(res.grads))
    analytic = [g.copy() for g in net.gradients()]
    worst = 0.0
    for p, g in zip(net.parameters(), analytic):
        num = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            up = loss()
            p[idx] = keep - h
            dn = loss()
            p[idx] = keep
            num[idx] = (up - dn) / (2 * h)
        worst = max(worst, rel_error(g, num))
    return worst


# acceptance lines, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
