import numpy as np
import pytest

from tpavc.errors import ConfigError, DimensionError
from tpavc.nn import finite_difference_check
from tpavc.nn import tensor as T
from tpavc.tpa import EncoderConfig, MultiScaleEncoder

CFG = EncoderConfig(h=4, layers=2, region_size=3, memory=5)


def inputs(rng, B=2):
    return rng.normal(size=(B, 3, 6)), rng.normal(size=(B, 5)), rng.integers(0, 4, size=B)


def test_output_shapes():
    rng = np.random.default_rng(0)
    enc = MultiScaleEncoder(CFG, rng)
    out = enc(*inputs(rng, 3))
    assert out.F_m.shape == (3, 8) and out.F_m_hat.shape == (3, 4) and out.F_z.shape == (3, 8)


def test_rows_of_a_batch_are_independent():
    rng = np.random.default_rng(1)
    enc = MultiScaleEncoder(CFG, rng)
    f, m, s = inputs(rng, 4)
    batch = enc(f, m, s).F_z.data
    for b in range(4):
        one = enc(f[b:b + 1], m[b:b + 1], s[b:b + 1]).F_z.data
        assert np.allclose(batch[b], one[0], atol=1e-13)


def test_bus_order_does_not_matter():
    rng = np.random.default_rng(2)
    enc = MultiScaleEncoder(CFG, rng)
    f, m, s = inputs(rng)
    perm = [2, 0, 1]
    assert np.allclose(enc(f, m, s).F_z.data, enc(f[:, perm], m, s).F_z.data, atol=1e-12)


def test_season_and_memory_change_features():
    rng = np.random.default_rng(3)
    enc = MultiScaleEncoder(CFG, rng)
    f, m, s = inputs(rng, 1)
    base = enc(f, m, s).F_z.data
    assert not np.allclose(base, enc(f, m, (s + 1) % 4).F_z.data)
    assert not np.allclose(base, enc(f, m + 1.0, s).F_z.data)


def test_input_ablations_ignore_their_input():
    rng = np.random.default_rng(4)
    f, m, s = inputs(rng, 1)
    no_mem = MultiScaleEncoder(CFG, np.random.default_rng(9), use_memory=False)
    assert np.array_equal(no_mem(f, m, s).F_z.data, no_mem(f, m * 0 + 7.0, s).F_z.data)
    no_season = MultiScaleEncoder(CFG, np.random.default_rng(9), use_season=False)
    assert np.array_equal(no_season(f, m, s).F_z.data, no_season(f, m, (s + 2) % 4).F_z.data)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    cfg = EncoderConfig(h=2, layers=1, region_size=2, memory=3)
    enc = MultiScaleEncoder(cfg, rng)
    f, m, s = rng.normal(size=(2, 2, 6)), rng.normal(size=(2, 3)), np.array([1, 3])
    w = rng.normal(size=(2, 4))
    err = finite_difference_check(lambda: T.sum(T.mul(enc(f, m, s).F_z, w)), enc.parameters())
    assert err < 1e-4


def test_shape_and_index_guards():
    rng = np.random.default_rng(6)
    enc = MultiScaleEncoder(CFG, rng)
    f, m, s = inputs(rng)
    with pytest.raises(DimensionError):
        enc(f[:, :2], m, s)
    with pytest.raises(DimensionError):
        enc(f, m[:, :4], s)
    with pytest.raises(IndexError):
        enc(f, m, np.array([0, 4]))
    with pytest.raises(IndexError):
        enc(f, m, np.array([0.0, 1.0]))


def test_config_validation():
    for bad in (EncoderConfig(h=3), EncoderConfig(layers=0), EncoderConfig(memory=0), EncoderConfig(region_size=0)):
        with pytest.raises(ConfigError):
            bad.validate()


def test_same_seed_same_features():
    f, m, s = inputs(np.random.default_rng(7))
    a = MultiScaleEncoder(CFG, np.random.default_rng(8))(f, m, s).F_z.data
    b = MultiScaleEncoder(CFG, np.random.default_rng(8))(f, m, s).F_z.data
    assert a.tobytes() == b.tobytes()
