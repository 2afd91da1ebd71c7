from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alphalab import dsl
from alphalab.dsl import Expr, RPNError, const, op, parse_rpn, terminal, to_rpn

from conftest import random_panel


@pytest.fixture(scope="module")
def panel():
    return random_panel(25, 80, seed=11, holes=0.03)


def test_rpn_round_trip_random_expressions():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        e = dsl.random_expr(rng, 6)
        dsl.validate(e, max_depth=6)
        assert parse_rpn(to_rpn(e)) == e
        assert parse_rpn(str(e)) == e


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_constant_tokens_round_trip(x):
    e = op("add", terminal("close"), const(x))
    assert parse_rpn(to_rpn(e)) == e


@pytest.mark.parametrize("text, msg", [
    ("close add", "underflow"),
    ("close open", "stack"),
    ("close frobnicate", "unknown"),
    ("close nan add", "finite"),
    ("close ts_mean_0", "window"),
    ("", "stack"),
])
def test_parse_errors(text, msg):
    with pytest.raises(RPNError, match=msg):
        parse_rpn(text)


def test_tree_and_stack_evaluators_agree(panel):
    rng = np.random.default_rng(1)
    for _ in range(200):
        e = dsl.random_expr(rng, 5)
        a = dsl.eval_tree(e, panel)
        b = dsl.eval_rpn(to_rpn(e), panel)
        assert np.isfinite(a).all()
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_momentum_20_matches_hand_computation(panel):
    f = dsl.classical_feature("momentum_20", panel)
    close = panel.field("close")
    t = 50
    ok = f.valid[:, t]
    np.testing.assert_allclose(f.values[ok, t], close[ok, t] / close[ok, t - 20] - 1.0, rtol=1e-12)
    assert not f.valid[:, :20].any()


def test_classical_set():
    assert len(dsl.CLASSICAL) == 8
    assert dsl.classical_expr("volatility_20").lookback == 20
    with pytest.raises(KeyError):
        dsl.classical_expr("no_such_feature")


def test_windowed_primitives_on_small_series():
    p = random_panel(2, 6, seed=0)
    close = p.field("close")
    d = dsl.eval_rpn("close delay_2", p)
    np.testing.assert_array_equal(d[:, 2:], close[:, :-2])
    m = dsl.eval_rpn("close ts_mean_3", p)
    np.testing.assert_allclose(m[:, 4], close[:, 2:5].mean(axis=1), rtol=1e-14)
    s = dsl.eval_rpn("close ts_std_3", p)
    np.testing.assert_allclose(s[:, 5], close[:, 3:6].std(axis=1), rtol=1e-12)
    hi = dsl.eval_rpn("close ts_max_4", p)
    np.testing.assert_array_equal(hi[:, 5], close[:, 2:6].max(axis=1))


def test_safe_div_and_clamping():
    p = random_panel(3, 5, seed=1)
    z = dsl.eval_rpn("close close close sub safe_div", p)
    assert (z == 0).all()
    big = dsl.eval_rpn("1e300 1e300 mul", p)
    assert (big == dsl.CLAMP).all()


def test_cs_rank_unit_interval(panel):
    r = dsl.eval_rpn("volume cs_rank", panel)
    assert r.min() >= 0 and r.max() <= 1
    t = 10
    ok = panel.tradable[:, t]
    assert r[ok, t].min() == 0 and r[ok, t].max() == 1


def test_validity_follows_lookback(panel):
    e = parse_rpn("close delta_3 ts_mean_4")
    assert e.lookback == 6
    mask = dsl.validity_mask(e, panel)
    trad = panel.tradable
    for a, t in [(0, 20), (5, 40), (9, 7)]:
        assert mask[a, t] == trad[a, t - 6: t + 1].all()
    assert not mask[:, :6].any()


def test_causality_future_perturbation(panel):
    rng = np.random.default_rng(2)
    t = 45
    v = np.array(panel.values)
    v[:, t + 1:, :4] *= np.exp(rng.standard_normal(v[:, t + 1:, :4].shape))
    v[:, t + 1:, 4] *= 5
    trad = np.array(panel.tradable)
    trad[:, t + 1:] = rng.random(trad[:, t + 1:].shape) > 0.5
    later = panel.replace_values(np.nan_to_num(v, nan=1.0), trad)
    for _ in range(100):
        e = dsl.random_expr(rng, 5)
        if e.lookback > t:
            continue
        np.testing.assert_array_equal(dsl.evaluate(e, panel, t), dsl.evaluate(e, later, t))


def test_evaluate_rejects_days_inside_lookback(panel):
    with pytest.raises(ValueError, match="look-back"):
        dsl.evaluate(dsl.classical_expr("momentum_20"), panel, 10)


def test_depth_size_and_validate():
    e = op("ts_mean", op("add", terminal("close"), const(1.0)), window=5)
    assert (e.depth, e.size) == (3, 4)
    dsl.validate(e, max_depth=3)
    with pytest.raises(ValueError, match="depth"):
        dsl.validate(e, max_depth=2)
    with pytest.raises(ValueError, match="operands"):
        dsl.validate(Expr("add", (terminal("close"),)))


def test_replace_at_and_node_paths():
    e = parse_rpn("close open add ts_max_5")
    paths = dict(dsl.node_paths(e))
    assert paths[(0, 1)] == terminal("open")
    new = dsl.replace_at(e, (0, 1), terminal("high"))
    assert str(new) == "close high add ts_max_5"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_random_expr_respects_depth(seed, depth):
    e = dsl.random_expr(np.random.default_rng(seed), depth)
    assert e.depth <= depth
    dsl.validate(e, max_depth=depth)
