"""
SD MIMO-RSMA precoding and detection matrices.

The common message goes through P_c = G_c V_c^-H Delta_c^1/2 with the HO-GSVD
of {H_k G_c, k in K_c}; each private message goes through the block
diagonalization precoder P_k = N_k V_k Delta_k^1/2. Everything that does not
depend on the power loading lives in `SdDesign`, so the optimizer can try many
loadings on one design.
"""

from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .channel_model import ChannelSet, encode_matrix
from .decompositions import (HoGsvdResult, ho_gsvd, left_pseudo_inverse,
                             null_space_basis, row_space_intersection)
from .errors import ConfigError, ConstraintViolation, DimensionMismatch, DomainError, RankDeficiency

POWER_RTOL = 1e-6
# Solver round-off tolerated when building a PowerAllocation.
NEGATIVE_POWER_TOL = 1e-12


@dataclass(frozen=True)
class CommonGroup:
    """Users that decode the common message, zero-based and sorted."""
    members: Tuple[int, ...]
    num_users: int
    streams: int

    @classmethod
    def of(cls, members: Iterable[int], user_antennas: Sequence[int]) -> "CommonGroup":
        chosen = tuple(sorted({int(m) for m in members}))
        k_users = len(user_antennas)
        if any(m < 0 or m >= k_users for m in chosen):
            raise ConfigError(f"common group {chosen} references users outside 0..{k_users - 1}")
        streams = min(user_antennas[m] for m in chosen) if chosen else 0
        return cls(chosen, k_users, streams)

    @classmethod
    def empty(cls, num_users: int) -> "CommonGroup":
        return cls((), num_users, 0)

    @classmethod
    def everyone(cls, user_antennas: Sequence[int]) -> "CommonGroup":
        return cls.of(range(len(user_antennas)), user_antennas)

    @property
    def is_empty(self) -> bool:
        return not self.members

    @property
    def fractions(self) -> np.ndarray:
        """v_k = 1/|K_c| for members, 0 otherwise."""
        v = np.zeros(self.num_users)
        if self.members:
            v[list(self.members)] = 1.0 / len(self.members)
        return v

    @property
    def label(self) -> str:
        return "{" + ",".join(str(m + 1) for m in self.members) + "}"

    def __contains__(self, user: int) -> bool:
        return user in self.members


@dataclass(frozen=True, eq=False)
class CommonPrecoder:
    group: CommonGroup
    basis: np.ndarray            # G_c, N x M
    right_factor: np.ndarray     # V_c, M x M
    right_inverse: np.ndarray    # V_c^-1
    direction: np.ndarray        # G_c V_c^-H
    detectors: Dict[int, np.ndarray]   # E_k^+, M x M_k
    gains: Dict[int, np.ndarray]       # diagonal of D_k
    cost: np.ndarray             # c_l = (V_c^-1 V_c^-H)_{l,l}
    hogsvd: HoGsvdResult

    @property
    def condition_number(self) -> float:
        return self.hogsvd.condition_number

    def diagonalization_residual(self, user: int, h_k: np.ndarray) -> float:
        """||E_k^+ (H_k G_c) V_c^-H - D_k||_F / (1 + ||D_k||_F)."""
        d_k = np.diag(self.gains[user])
        product = self.detectors[user] @ (h_k @ self.direction)
        return float(np.linalg.norm(product - d_k) / (1.0 + np.linalg.norm(d_k)))


@dataclass(frozen=True, eq=False)
class PrivatePrecoder:
    user: int
    null_basis: np.ndarray       # N_k, N x M_k
    left: np.ndarray             # U_k
    singular_values: np.ndarray  # diagonal of Sigma_k, descending
    right: np.ndarray            # V_k
    direction: np.ndarray        # N_k V_k


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    common: np.ndarray
    private: Tuple[np.ndarray, ...]

    def __post_init__(self):
        common = np.asarray(self.common, dtype=float).reshape(-1)
        private = tuple(np.asarray(p, dtype=float).reshape(-1) for p in self.private)
        for arr in (common, *private):
            if arr.size and arr.min() < -NEGATIVE_POWER_TOL:
                raise DomainError(f"negative stream power {arr.min():.3e}")
        object.__setattr__(self, "common", np.clip(common, 0.0, None))
        object.__setattr__(self, "private", tuple(np.clip(p, 0.0, None) for p in private))

    @classmethod
    def zeros(cls, streams: int, user_antennas: Sequence[int]) -> "PowerAllocation":
        return cls(np.zeros(streams), tuple(np.zeros(m) for m in user_antennas))

    @classmethod
    def from_vector(cls, vec: np.ndarray, streams: int, user_antennas: Sequence[int]) -> "PowerAllocation":
        vec = np.asarray(vec, dtype=float)
        if vec.size != streams + sum(user_antennas):
            raise DimensionMismatch(f"power vector of length {vec.size} does not fit the stream layout")
        splits = np.cumsum([streams, *user_antennas])[:-1]
        parts = np.split(vec, splits)
        return cls(parts[0], tuple(parts[1:]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.common, *self.private])

    def scaled(self, factor: float) -> "PowerAllocation":
        return PowerAllocation(self.common * factor, tuple(p * factor for p in self.private))

    def cost(self, common_cost: np.ndarray) -> float:
        """Left-hand side of the simplified power constraint."""
        return float(np.dot(common_cost, self.common) + sum(p.sum() for p in self.private))

    def to_dict(self) -> Dict[str, Any]:
        return {"common": self.common.tolist(), "private": [p.tolist() for p in self.private]}


@dataclass(frozen=True, eq=False)
class SdDesign:
    """Power-independent part of a PrecoderSet."""
    group: CommonGroup
    common: Optional[CommonPrecoder]
    private: Tuple[PrivatePrecoder, ...]
    cm_interference: Dict[int, np.ndarray]   # W_k = E_k^+ (H_k N_k) V_k, k in K_c
    pm_interference: Tuple[np.ndarray, ...]  # W_c,k = U_k^H (H_k G_c) V_c^-H, zero for k in K_c
    use_estimated: bool = False

    @property
    def streams(self) -> int:
        return self.group.streams

    @property
    def user_antennas(self) -> Tuple[int, ...]:
        return tuple(p.direction.shape[1] for p in self.private)

    @property
    def bs_antennas(self) -> int:
        return self.private[0].direction.shape[0]

    @property
    def common_cost(self) -> np.ndarray:
        return self.common.cost if self.common is not None else np.zeros(0)

    def zero_powers(self) -> PowerAllocation:
        return PowerAllocation.zeros(self.streams, self.user_antennas)

    def power_cost(self, powers: PowerAllocation) -> float:
        return powers.cost(self.common_cost)

    def load(self, powers: PowerAllocation, p_total: Optional[float] = None) -> "PrecoderSet":
        """Apply a power loading; checks the simplified constraint when p_total is given."""
        if powers.common.size != self.streams or tuple(p.size for p in powers.private) != self.user_antennas:
            raise DimensionMismatch("power allocation does not match the stream layout")
        if p_total is not None:
            used = self.power_cost(powers)
            if used > p_total * (1.0 + POWER_RTOL) + NEGATIVE_POWER_TOL:
                raise ConstraintViolation(f"power {used:.6g} exceeds budget {p_total:.6g}")
        if self.common is not None:
            p_c = self.common.direction * np.sqrt(powers.common)
        else:
            p_c = np.zeros((self.bs_antennas, 0), dtype=np.complex128)
        p_k = tuple(pp.direction * np.sqrt(pw) for pp, pw in zip(self.private, powers.private))
        return PrecoderSet(design=self, powers=powers, common_precoder=p_c, private_precoders=p_k)

    def diagnostics(self, channels: ChannelSet) -> Dict[str, float]:
        """Common-stream diagonalization residual, BD leakage and cond(V_c) on the design channels."""
        h = channels.channels(self.use_estimated)
        out = {"cond_vc": self.common.condition_number if self.common is not None else 1.0}
        out["max_diag_residual"] = max(
            (self.common.diagonalization_residual(k, h[k]) for k in self.group.members), default=0.0)
        leak = 0.0
        for k, pp in enumerate(self.private):
            for j, h_j in enumerate(h):
                if j != k:
                    scale = np.linalg.norm(h_j) * np.linalg.norm(pp.direction)
                    leak = max(leak, float(np.linalg.norm(h_j @ pp.direction) / scale))
        out["max_bd_leakage"] = leak
        return out


@dataclass(frozen=True, eq=False)
class PrecoderSet:
    design: SdDesign
    powers: PowerAllocation
    common_precoder: np.ndarray              # P_c
    private_precoders: Tuple[np.ndarray, ...]  # P_k

    @property
    def group(self) -> CommonGroup:
        return self.design.group

    def transmit_power(self) -> float:
        """tr(P_c P_c^H) + sum_k tr(P_k P_k^H)."""
        total = np.sum(np.abs(self.common_precoder) ** 2)
        total += sum(np.sum(np.abs(p) ** 2) for p in self.private_precoders)
        return float(total)

    def constrained_power(self) -> float:
        """sum_l c_l p_c,l + sum_k sum_l p_k,l."""
        return self.design.power_cost(self.powers)

    def cm_detector(self, user: int) -> np.ndarray:
        return self.design.common.detectors[user]

    def pm_detector(self, user: int) -> np.ndarray:
        return self.design.private[user].left.conj().T

    def to_dict(self) -> Dict[str, Any]:
        d = self.design
        out: Dict[str, Any] = {
            "format": "sd-rsma/precoder-set",
            "version": 1,
            "members": list(d.group.members),
            "label": d.group.label,
            "use_estimated": d.use_estimated,
            "powers": self.powers.to_dict(),
            "P_c": encode_matrix(self.common_precoder),
            "P_k": [encode_matrix(p) for p in self.private_precoders],
            "U_k": [encode_matrix(pp.left) for pp in d.private],
            "Sigma_k": [pp.singular_values.tolist() for pp in d.private],
            "W_ck": [encode_matrix(w) for w in d.pm_interference],
        }
        if d.common is not None:
            c = d.common
            out.update({
                "G_c": encode_matrix(c.basis),
                "V_c": encode_matrix(c.right_factor),
                "c": c.cost.tolist(),
                "E_k_plus": {str(k): encode_matrix(e) for k, e in c.detectors.items()},
                "D_k": {str(k): g.tolist() for k, g in c.gains.items()},
                "W_k": {str(k): encode_matrix(w) for k, w in d.cm_interference.items()},
            })
        return out


def build_common_precoder(channels: ChannelSet, group: CommonGroup,
                          use_estimated: bool = False) -> CommonPrecoder:
    if group.is_empty:
        raise ConfigError("the empty common group has no common precoder")
    h = channels.channels(use_estimated)
    members = group.members
    basis = row_space_intersection([h[k] for k in members], group.streams).matrix
    try:
        res = ho_gsvd([h[k] @ basis for k in members])
    except RankDeficiency as e:
        user = members[e.index]
        raise RankDeficiency(f"effective common channel H_k G_c of user {user + 1} is rank deficient",
                             index=user) from e

    v_inv = np.linalg.inv(res.V)
    direction = basis @ v_inv.conj().T
    cost = np.sum(np.abs(v_inv) ** 2, axis=1)
    return CommonPrecoder(
        group=group,
        basis=basis,
        right_factor=res.V,
        right_inverse=v_inv,
        direction=direction,
        detectors={k: left_pseudo_inverse(res.U[i]) for i, k in enumerate(members)},
        gains={k: res.sigma[i] for i, k in enumerate(members)},
        cost=cost,
        hogsvd=res,
    )


def build_private_precoders(channels: ChannelSet, use_estimated: bool = False) -> Tuple[PrivatePrecoder, ...]:
    h = channels.channels(use_estimated)
    n = channels.bs_antennas
    out = []
    for k, h_k in enumerate(h):
        others = [h_j for j, h_j in enumerate(h) if j != k]
        stacked = np.vstack(others) if others else np.zeros((0, n), dtype=np.complex128)
        null_basis = null_space_basis(stacked, h_k.shape[0]).matrix
        u, s, vh = np.linalg.svd(h_k @ null_basis)
        v = vh.conj().T
        out.append(PrivatePrecoder(user=k, null_basis=null_basis, left=u, singular_values=s,
                                   right=v, direction=null_basis @ v))
    return tuple(out)


def build_design(channels: ChannelSet, group: CommonGroup, use_estimated: bool = False) -> SdDesign:
    if group.num_users != channels.num_users:
        raise DimensionMismatch(f"group built for {group.num_users} users, channel set has {channels.num_users}")
    h = channels.channels(use_estimated)
    private = build_private_precoders(channels, use_estimated)
    common = None if group.is_empty else build_common_precoder(channels, group, use_estimated)

    cm_interference: Dict[int, np.ndarray] = {}
    pm_interference = []
    for k, pp in enumerate(private):
        if common is not None and k in group:
            cm_interference[k] = common.detectors[k] @ (h[k] @ pp.direction)
            pm_interference.append(np.zeros((h[k].shape[0], group.streams), dtype=np.complex128))
        elif common is not None:
            pm_interference.append(pp.left.conj().T @ (h[k] @ common.direction))
        else:
            pm_interference.append(np.zeros((h[k].shape[0], 0), dtype=np.complex128))

    return SdDesign(group=group, common=common, private=private, cm_interference=cm_interference,
                    pm_interference=tuple(pm_interference), use_estimated=use_estimated)


def assemble(channels: ChannelSet, group: CommonGroup, powers: PowerAllocation,
             use_estimated: bool = False, p_total: Optional[float] = None) -> PrecoderSet:
    return build_design(channels, group, use_estimated).load(powers, p_total)
