"""
User channels for the downlink: i.i.d. or pairwise-correlated Rayleigh fading,
free-space path loss L_k = d_k^2 and additive BS-side estimation error.

H_k is stored unscaled; 1/sqrt(L_k) is applied only inside the signal and
rate equations.

Random streams: one counter-based Philox generator per user for the fading
and one per user for the CSI error, all spawned from
SeedSequence(seed, spawn_key=(trial,)). Trial t therefore draws the same
matrices no matter which worker evaluates it.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ConfigError, UnsupportedTopology
from .schemas import ChannelConfig, check_channel_topology

# Users paired by the correlated construction: (1, 3) and (2, 4), zero-based.
CORRELATED_PAIRS = ((0, 2), (1, 3))
CORRELATED_USERS = 4

CHANNEL_FORMAT = "sd-rsma/channel-set"


def dbm_to_linear(p_dbm: float) -> float:
    """Power in dBm to mW."""
    return float(10.0 ** (p_dbm / 10.0))


def encode_matrix(a: np.ndarray) -> List:
    """Row-major nested lists with complex entries as [re, im]."""
    a = np.asarray(a, dtype=np.complex128)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_matrix(data: Sequence, cols: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.size == 0:
        rows = arr.shape[0] if arr.ndim >= 1 else 0
        return np.zeros((rows, cols or 0), dtype=np.complex128)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise DimensionMismatch(f"expected rows of [re, im] pairs, got array of shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass(frozen=True)
class ChannelSet:
    """True and BS-estimated channels of all K users plus path losses and noise."""
    true: Tuple[np.ndarray, ...]
    estimated: Tuple[np.ndarray, ...]
    path_loss: np.ndarray
    noise_var: float

    def __post_init__(self):
        true = tuple(np.asarray(h, dtype=np.complex128) for h in self.true)
        estimated = tuple(np.asarray(h, dtype=np.complex128) for h in self.estimated)
        path_loss = np.asarray(self.path_loss, dtype=float).reshape(-1)
        object.__setattr__(self, "true", true)
        object.__setattr__(self, "estimated", estimated)
        object.__setattr__(self, "path_loss", path_loss)
        object.__setattr__(self, "noise_var", float(self.noise_var))

        if not true:
            raise DimensionMismatch("a channel set needs at least one user")
        if len(estimated) != len(true) or path_loss.size != len(true):
            raise DimensionMismatch("true channels, estimates and path losses disagree on K")
        n = true[0].shape[1] if true[0].ndim == 2 else -1
        for k, (h, h_est) in enumerate(zip(true, estimated)):
            if h.ndim != 2 or h.shape[1] != n:
                raise DimensionMismatch(f"user {k} channel has shape {h.shape}, expected (M_k, {n})")
            if h_est.shape != h.shape:
                raise DimensionMismatch(f"user {k} estimate has shape {h_est.shape}, expected {h.shape}")
        if sum(h.shape[0] for h in true) != n:
            raise ConfigError("channel set is not critically loaded (sum M_k != N)")
        if np.any(path_loss <= 0) or not self.noise_var > 0:
            raise ConfigError("path losses and noise variance must be positive")

    @property
    def num_users(self) -> int:
        return len(self.true)

    @property
    def user_antennas(self) -> Tuple[int, ...]:
        return tuple(h.shape[0] for h in self.true)

    @property
    def bs_antennas(self) -> int:
        return self.true[0].shape[1]

    def channels(self, use_estimated: bool = False) -> Tuple[np.ndarray, ...]:
        return self.estimated if use_estimated else self.true

    def perfect(self) -> "ChannelSet":
        """Same draw with the estimation error removed."""
        return ChannelSet(self.true, self.true, self.path_loss, self.noise_var)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": CHANNEL_FORMAT,
            "version": 1,
            "num_users": self.num_users,
            "user_antennas": list(self.user_antennas),
            "bs_antennas": self.bs_antennas,
            "noise_var_mw": self.noise_var,
            "path_loss": self.path_loss.tolist(),
            "true": [encode_matrix(h) for h in self.true],
            "estimated": [encode_matrix(h) for h in self.estimated],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ChannelSet":
        if data.get("format") != CHANNEL_FORMAT:
            raise ConfigError(f"not a channel-set document (format={data.get('format')!r})")
        n = int(data["bs_antennas"])
        return cls(
            true=tuple(decode_matrix(h, n) for h in data["true"]),
            estimated=tuple(decode_matrix(h, n) for h in data["estimated"]),
            path_loss=np.asarray(data["path_loss"], dtype=float),
            noise_var=float(data["noise_var_mw"]),
        )


def seed_sequence(seed: int, trial: Optional[int] = None) -> np.random.SeedSequence:
    if trial is None:
        return np.random.SeedSequence(seed)
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def complex_gaussian(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly symmetric CN(0, variance) entries."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_channels(cfg: ChannelConfig, trial: Optional[int] = None) -> ChannelSet:
    """
    Draw one channel realization.

    H_k = G_k, except that with correlation alpha > 0 (four users only)
    H_3 = alpha G_1 + sqrt(1 - alpha^2) G_3 and H_4 = alpha G_2 + sqrt(1 - alpha^2) G_4.
    The estimate is H_k + dH_k with dH_k ~ CN(0, mu^2).
    """
    check_channel_topology(cfg)
    k_users = cfg.num_users
    antennas = list(cfg.user_antennas)
    n = cfg.bs_antennas
    alpha = float(cfg.correlation)

    if alpha > 0:
        if k_users != CORRELATED_USERS:
            raise UnsupportedTopology(f"correlated channels need exactly {CORRELATED_USERS} users, got {k_users}")
        for a, b in CORRELATED_PAIRS:
            if antennas[a] != antennas[b]:
                raise UnsupportedTopology(f"paired users {a + 1} and {b + 1} must have equal antenna counts")

    streams = seed_sequence(cfg.seed, trial).spawn(2 * k_users)
    fading_rngs = [np.random.Generator(np.random.Philox(s)) for s in streams[:k_users]]
    error_rngs = [np.random.Generator(np.random.Philox(s)) for s in streams[k_users:]]

    g = [complex_gaussian(rng, (m, n)) for rng, m in zip(fading_rngs, antennas)]
    h = list(g)
    if alpha > 0:
        beta = np.sqrt(1.0 - alpha ** 2)
        for a, b in CORRELATED_PAIRS:
            h[b] = alpha * g[a] + beta * g[b]

    if cfg.csi_error_var > 0:
        estimated = [hk + complex_gaussian(rng, hk.shape, cfg.csi_error_var) for rng, hk in zip(error_rngs, h)]
    else:
        estimated = list(h)

    return ChannelSet(
        true=tuple(h),
        estimated=tuple(estimated),
        path_loss=np.asarray(cfg.distances_m, dtype=float) ** 2,
        noise_var=dbm_to_linear(cfg.noise_dbm),
    )
