"""
Tests for the SD MIMO-RSMA precoders and power loading.
"""

import numpy as np
import pytest

from src.channel_model import ChannelSet, generate_channels
from src.errors import ConfigError, ConstraintViolation, DimensionMismatch, DomainError, RankDeficiency
from src.precoder import (CommonGroup, PowerAllocation, assemble, build_common_precoder, build_design,
                          build_private_precoders)
from src.schemas import ChannelConfig


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def reference_channels():
    cfg = ChannelConfig(num_users=4, user_antennas=[4, 4, 4, 4], bs_antennas=16, distances_m=[50] * 4,
                        correlation=0.8, csi_error_var=0.1, seed=1)
    return generate_channels(cfg)


@pytest.fixture
def small_channels():
    cfg = ChannelConfig(num_users=3, user_antennas=[2, 3, 2], bs_antennas=7, distances_m=[10, 20, 30], seed=4)
    return generate_channels(cfg)


def drawn(seed, correlation):
    cfg = ChannelConfig(num_users=4, user_antennas=[4, 4, 4, 4], bs_antennas=16, distances_m=[50] * 4,
                        correlation=correlation, seed=400 + seed)
    return generate_channels(cfg)


def random_powers(rng, design):
    return PowerAllocation(rng.uniform(0, 1, design.streams),
                           tuple(rng.uniform(0, 1, m) for m in design.user_antennas))


def test_group_basics():
    g = CommonGroup.of([2, 0], [4, 2, 3])
    assert g.members == (0, 2)
    assert g.streams == 3
    assert np.allclose(g.fractions, [0.5, 0.0, 0.5])
    assert g.label == "{1,3}"
    assert 2 in g and 1 not in g

    empty = CommonGroup.empty(3)
    assert empty.is_empty and empty.streams == 0 and empty.label == "{}"
    assert np.allclose(empty.fractions, 0.0)

    with pytest.raises(ConfigError):
        CommonGroup.of([3], [4, 2, 3])


def test_singleton_group_is_svd_diagonalization(reference_channels):
    group = CommonGroup.of([2], reference_channels.user_antennas)
    common = build_common_precoder(reference_channels, group)

    assert common.diagonalization_residual(2, reference_channels.true[2]) <= 1e-8
    # a single input gives a unitary V_c, hence unit power costs
    assert np.allclose(common.cost, 1.0, atol=1e-10)


@pytest.mark.parametrize("correlation", [0.0, 0.8])
@pytest.mark.parametrize("seed", range(50))
def test_full_group_diagonalizes_every_user(seed, correlation):
    channels = drawn(seed, correlation)
    group = CommonGroup.everyone(channels.user_antennas)
    design = build_design(channels, group)
    diag = design.diagnostics(channels)

    assert diag["max_diag_residual"] <= 1e-8
    assert diag["max_bd_leakage"] <= 1e-8
    assert np.isfinite(diag["cond_vc"])
    assert np.all(design.common.cost > 0)
    for k in group.members:
        assert np.all(design.common.gains[k] >= 0)


@pytest.mark.parametrize("seed", range(50))
def test_private_precoders_block_diagonalize(seed):
    channels = drawn(seed, 0.8)
    private = build_private_precoders(channels)
    for k, pp in enumerate(private):
        assert np.allclose(pp.left.conj().T @ pp.left, np.eye(4), atol=1e-10)
        assert np.all(np.diff(pp.singular_values) <= 0)
        for j, h_j in enumerate(channels.true):
            if j != k:
                leak = np.linalg.norm(h_j @ pp.direction)
                assert leak <= 1e-8 * np.linalg.norm(h_j) * np.linalg.norm(pp.direction)


def test_single_user_private_precoder():
    rng = np.random.default_rng(0)
    h = crandn(rng, 3, 3)
    ch = ChannelSet((h,), (h,), np.array([1.0]), 1e-3)
    (pp,) = build_private_precoders(ch)

    assert np.allclose(pp.singular_values, np.linalg.svd(h, compute_uv=False), atol=1e-10)


def test_block_structured_channels_keep_own_singular_values():
    rng = np.random.default_rng(2)
    a, b = crandn(rng, 2, 2), crandn(rng, 3, 3)
    h1 = np.hstack([a, np.zeros((2, 3))])
    h2 = np.hstack([np.zeros((3, 2)), b])
    ch = ChannelSet((h1, h2), (h1, h2), np.array([1.0, 1.0]), 1e-3)
    p1, p2 = build_private_precoders(ch)

    assert np.allclose(p1.singular_values, np.linalg.svd(a, compute_uv=False), atol=1e-10)
    assert np.allclose(p2.singular_values, np.linalg.svd(b, compute_uv=False), atol=1e-10)


def test_zero_powers_give_zero_precoders(small_channels):
    design = build_design(small_channels, CommonGroup.everyone(small_channels.user_antennas))
    pre = design.load(design.zero_powers(), p_total=1.0)

    assert np.count_nonzero(pre.common_precoder) == 0
    assert all(np.count_nonzero(p) == 0 for p in pre.private_precoders)
    assert pre.transmit_power() == 0.0


def test_transmit_power_matches_simplified_constraint():
    rng = np.random.default_rng(5)
    groups = [(0,), (0, 2), (1, 2, 3), (0, 1, 2, 3)]
    for trial in range(100):
        channels = drawn(trial, 0.8 if trial % 2 else 0.0)
        members = groups[trial % len(groups)]
        design = build_design(channels, CommonGroup.of(members, channels.user_antennas))
        pre = design.load(random_powers(rng, design))
        assert pre.transmit_power() == pytest.approx(pre.constrained_power(), rel=1e-8)


def test_power_scaling(small_channels):
    rng = np.random.default_rng(6)
    design = build_design(small_channels, CommonGroup.of([0, 1], small_channels.user_antennas))
    powers = random_powers(rng, design)
    base = design.load(powers).transmit_power()

    assert design.load(powers.scaled(9.0)).transmit_power() == pytest.approx(9.0 * base, rel=1e-12)


def test_interference_matrices(small_channels):
    group = CommonGroup.of([0, 2], small_channels.user_antennas)
    design = build_design(small_channels, group)

    for k in group.members:
        assert design.cm_interference[k].shape == (group.streams, small_channels.user_antennas[k])
        assert np.count_nonzero(design.pm_interference[k]) == 0
    assert design.pm_interference[1].shape == (3, group.streams)
    assert 1 not in design.cm_interference


def test_budget_violation(small_channels):
    design = build_design(small_channels, CommonGroup.empty(3))
    powers = PowerAllocation(np.zeros(0), (np.ones(2), np.ones(3), np.ones(2)))

    assert design.load(powers, p_total=7.0).constrained_power() == pytest.approx(7.0)
    with pytest.raises(ConstraintViolation):
        design.load(powers, p_total=6.0)


def test_layout_mismatch(small_channels):
    design = build_design(small_channels, CommonGroup.empty(3))
    with pytest.raises(DimensionMismatch):
        design.load(PowerAllocation(np.zeros(0), (np.ones(2), np.ones(2), np.ones(2))))


def test_negative_power_rejected():
    with pytest.raises(DomainError):
        PowerAllocation(np.array([-0.1]), (np.ones(2),))
    # solver round-off is clipped
    p = PowerAllocation(np.array([-1e-15]), (np.ones(2),))
    assert p.common[0] == 0.0


def test_empty_group_is_bd_baseline(small_channels):
    group = CommonGroup.empty(3)
    with pytest.raises(ConfigError):
        build_common_precoder(small_channels, group)

    pre = assemble(small_channels, group, PowerAllocation.zeros(0, small_channels.user_antennas))
    assert pre.common_precoder.shape == (7, 0)
    assert pre.design.common is None


def test_estimated_design_diagonalizes_estimates(reference_channels):
    design = build_design(reference_channels, CommonGroup.everyone(reference_channels.user_antennas), use_estimated=True)
    diag = design.diagnostics(reference_channels)

    assert diag["max_diag_residual"] <= 1e-8
    assert diag["max_bd_leakage"] <= 1e-8
    # the true channels see leakage
    true_leak = np.linalg.norm(reference_channels.true[1] @ design.private[0].direction)
    assert true_leak > 1e-6


def test_rank_deficient_effective_channel_names_user():
    h1 = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=complex)
    h2 = np.array([[1, 0, 0, 0], [0, 0, 0.5, 0]], dtype=complex)
    ch = ChannelSet((h1, h2), (h1, h2), np.array([1.0, 1.0]), 1e-3)

    with pytest.raises(RankDeficiency) as exc:
        build_common_precoder(ch, CommonGroup.everyone(ch.user_antennas))
    assert exc.value.index == 1


def test_precoder_set_to_dict(small_channels):
    pre = assemble(small_channels, CommonGroup.of([1], small_channels.user_antennas),
                   PowerAllocation(np.ones(3), tuple(np.ones(m) for m in small_channels.user_antennas)))
    data = pre.to_dict()

    assert data["format"] == "sd-rsma/precoder-set"
    assert data["label"] == "{2}"
    assert len(data["P_k"]) == 3
    assert set(data["E_k_plus"]) == {"1"}
