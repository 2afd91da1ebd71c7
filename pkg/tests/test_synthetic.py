from __future__ import annotations

import numpy as np
import pytest

from alphalab.dsl import evaluate_panel, classical_expr
from alphalab.ic import feature_ic
from alphalab.market_data import forward_return
from alphalab.synthetic import SynthConfig, generate_synthetic_panel


def test_default_shape_and_oracle_level(synth0):
    p = synth0.panel
    assert (p.n_assets, p.n_days) == (100, 345)
    assert p.tradable.all()
    assert 0.4 < synth0.oracle_ic_mean < 0.6


def test_oracle_ic_reproduced_by_feature_ic(synth0):
    feat = evaluate_panel(classical_expr("momentum_5"), synth0.panel)
    res = feature_ic(feat, forward_return(synth0.panel, 5), range(345))
    assert abs(res.mean - synth0.oracle_ic_mean) < 1e-12


def test_same_seed_identical_other_seed_different():
    a = generate_synthetic_panel(SynthConfig(seed=3))
    b = generate_synthetic_panel(SynthConfig(seed=3))
    c = generate_synthetic_panel(SynthConfig(seed=4))
    np.testing.assert_array_equal(a.panel.values, b.panel.values)
    assert not np.array_equal(a.panel.values, c.panel.values)


def test_ohlc_consistency(synth0):
    v = synth0.panel.values
    assert (v[..., 1] >= np.maximum(v[..., 0], v[..., 3])).all()
    assert (v[..., 2] <= np.minimum(v[..., 0], v[..., 3])).all()
    assert (v[..., 4] >= 0).all()


def test_zero_beta_gives_null_signal():
    res = generate_synthetic_panel(SynthConfig(seed=1, signal_beta=0.0))
    assert abs(res.oracle_ic_mean) < 0.05


def test_exact_mode_vanishing_noise_is_near_perfect():
    res = generate_synthetic_panel(SynthConfig(seed=0, noise_sigma=1e-9, mode="exact"))
    assert res.oracle_ic_mean > 0.99


@pytest.mark.parametrize("field, value", [
    ("n_days", 300), ("n_assets", 1), ("signal_beta", -0.1), ("noise_sigma", 0.0),
    ("base_vol", 0.0), ("mode", "weekly"), ("vol_dispersion", -1.0),
])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ValueError, match=field):
        SynthConfig(**{field: value}).validate()


def test_unknown_planted_feature():
    with pytest.raises(KeyError):
        SynthConfig(planted_feature="nope").validate()


def test_other_planted_feature():
    res = generate_synthetic_panel(SynthConfig(seed=2, planted_feature="reversal_5"))
    assert res.oracle.name == "reversal_5"
    assert res.oracle_ic_mean > 0.3
