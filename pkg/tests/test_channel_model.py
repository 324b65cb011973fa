"""
Tests for channel generation, unit conversion and the channel JSON codec.
"""

import numpy as np
import pytest

from src.channel_model import (ChannelSet, dbm_to_linear, decode_matrix, encode_matrix,
                               generate_channels)
from src.errors import ConfigError, DimensionMismatch, UnsupportedTopology
from src.schemas import ChannelConfig


@pytest.fixture
def reference_config():
    return ChannelConfig(num_users=4, user_antennas=[4, 4, 4, 4], bs_antennas=16,
                         distances_m=[50, 50, 50, 50], correlation=0.8, csi_error_var=0.1, seed=3)


def big_config(**kw):
    # 4 * 10^4 entries per user
    base = dict(num_users=4, user_antennas=[100, 100, 100, 100], bs_antennas=400,
                distances_m=[50, 50, 50, 50], seed=11)
    base.update(kw)
    return ChannelConfig(**base)


def test_dbm_to_linear():
    assert dbm_to_linear(0) == pytest.approx(1.0)
    assert dbm_to_linear(-35) == pytest.approx(3.1623e-4, rel=1e-4)
    assert dbm_to_linear(30) == pytest.approx(1000.0)


def test_shapes_and_path_loss(reference_config):
    ch = generate_channels(reference_config)

    assert ch.num_users == 4
    assert ch.user_antennas == (4, 4, 4, 4)
    assert ch.bs_antennas == 16
    assert np.allclose(ch.path_loss, 2500.0)
    assert ch.noise_var == pytest.approx(dbm_to_linear(-35))


def test_same_seed_same_draw(reference_config):
    a = generate_channels(reference_config, trial=5)
    b = generate_channels(reference_config, trial=5)
    c = generate_channels(reference_config, trial=6)

    assert all(np.array_equal(x, y) for x, y in zip(a.true, b.true))
    assert all(np.array_equal(x, y) for x, y in zip(a.estimated, b.estimated))
    assert not np.array_equal(a.true[0], c.true[0])


def test_no_error_means_exact_estimate():
    ch = generate_channels(ChannelConfig(num_users=2, user_antennas=[2, 2], bs_antennas=4, distances_m=[10, 20]))
    assert all(np.array_equal(h, e) for h, e in zip(ch.true, ch.estimated))


def test_uncorrelated_pairs_are_independent():
    ch = generate_channels(big_config(correlation=0.0))
    r = np.mean(ch.true[0] * np.conj(ch.true[2]))
    assert abs(r) < 0.02


def test_correlated_pairs():
    ch = generate_channels(big_config(correlation=0.8))
    assert abs(np.mean(ch.true[0] * np.conj(ch.true[2])) - 0.8) < 0.02
    assert abs(np.mean(ch.true[1] * np.conj(ch.true[3])) - 0.8) < 0.02


def test_entries_have_unit_variance():
    ch = generate_channels(big_config(correlation=0.8))
    for h in ch.true:
        assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.02


def test_csi_error_variance():
    ch = generate_channels(big_config(csi_error_var=0.1))
    for h, e in zip(ch.true, ch.estimated):
        assert np.mean(np.abs(e - h) ** 2) == pytest.approx(0.1, rel=0.05)


def test_correlation_needs_four_users():
    cfg = ChannelConfig(num_users=2, user_antennas=[2, 2], bs_antennas=4, distances_m=[10, 10], correlation=0.5)
    with pytest.raises(UnsupportedTopology):
        generate_channels(cfg)


def test_correlated_pairs_need_equal_antennas():
    cfg = ChannelConfig(num_users=4, user_antennas=[2, 3, 3, 2], bs_antennas=10, distances_m=[10] * 4,
                        correlation=0.5)
    with pytest.raises(UnsupportedTopology):
        generate_channels(cfg)


def test_config_must_be_critically_loaded():
    with pytest.raises(ValueError):
        ChannelConfig(num_users=2, user_antennas=[2, 2], bs_antennas=5, distances_m=[10, 10])


def test_channel_set_validation(reference_config):
    ch = generate_channels(reference_config)
    with pytest.raises(DimensionMismatch):
        ChannelSet(ch.true, ch.estimated[:3], ch.path_loss, ch.noise_var)
    with pytest.raises(ConfigError):
        ChannelSet(ch.true, ch.estimated, -ch.path_loss, ch.noise_var)
    with pytest.raises(ConfigError):
        ChannelSet(ch.true[:3], ch.estimated[:3], ch.path_loss[:3], ch.noise_var)


def test_perfect_drops_the_error(reference_config):
    ch = generate_channels(reference_config).perfect()
    assert all(np.array_equal(h, e) for h, e in zip(ch.true, ch.estimated))


def test_matrix_codec_layout():
    a = np.array([[1 + 2j, 3], [0, -1j]])
    assert encode_matrix(a) == [[[1.0, 2.0], [3.0, 0.0]], [[0.0, 0.0], [0.0, -1.0]]]
    assert np.array_equal(decode_matrix(encode_matrix(a)), a)
    assert decode_matrix([], cols=3).shape == (0, 3)


def test_channel_set_json_round_trip(reference_config):
    ch = generate_channels(reference_config)
    back = ChannelSet.from_dict(ch.to_dict())

    assert all(np.array_equal(x, y) for x, y in zip(ch.true, back.true))
    assert all(np.array_equal(x, y) for x, y in zip(ch.estimated, back.estimated))
    assert np.array_equal(ch.path_loss, back.path_loss)
    assert back.noise_var == ch.noise_var


def test_from_dict_rejects_other_documents():
    with pytest.raises(ConfigError):
        ChannelSet.from_dict({"format": "something-else"})
