"""
Achievable rates of SD MIMO-RSMA.

Two evaluation paths share one report type:

* matched CSI: the closed-form per-stream rates built from D_k, W_k, Sigma_k
  and W_c,k of the design (`StreamModel`, `evaluate`);
* mismatched CSI: precoders designed on the estimates, SINRs taken from the
  full linear model on the true channels, so BD leakage and off-diagonal
  common-stream leakage count as interference (`evaluate_mismatched`).

`symbol_oracle` transmits Gaussian symbols through the true channels and
measures the SINRs that the other two paths predict.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel_model import ChannelSet, complex_gaussian
from .decompositions import left_pseudo_inverse
from .errors import ConfigError, DimensionMismatch
from .precoder import CommonGroup, PowerAllocation, PrecoderSet, SdDesign
from .schemas import ReceiverCsi

logger = logging.getLogger(__name__)

# SINRs are capped before the log so a noiseless stream stays finite.
SINR_CAP = 1e9
WEIGHT_TOL = 1e-9
MIN_ORACLE_SYMBOLS = 10_000


def rate_from_sinr(sinr):
    return np.log2(1.0 + np.minimum(sinr, SINR_CAP))


def uniform_weights(num_users: int) -> np.ndarray:
    return np.full(num_users, 1.0 / num_users)


def check_weights(weights: Sequence[float], num_users: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != num_users:
        raise ConfigError(f"{w.size} weights for {num_users} users")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ConfigError(f"weights must be nonnegative and sum to 1 (sum = {w.sum():.12g})")
    return w


def weighted_sum_rate(common_rates: np.ndarray, private_rates: Sequence[np.ndarray],
                      weights: Sequence[float], fractions: Sequence[float]) -> float:
    """sum_k sum_l w_k v_k R_c,l + sum_k sum_l w_k R_k,l."""
    w = check_weights(weights, len(private_rates))
    v = np.asarray(fractions, dtype=float).reshape(-1)
    if v.size != w.size or np.any(v < 0):
        raise ConfigError("fractions must be nonnegative, one per user")
    common_part = float(np.dot(w, v)) * float(np.sum(common_rates))
    private_part = sum(w_k * float(np.sum(r)) for w_k, r in zip(w, private_rates))
    return common_part + private_part


@dataclass(frozen=True, eq=False)
class RateReport:
    group: CommonGroup
    common_per_user: Dict[int, np.ndarray]   # R_c,l^k
    private: Tuple[np.ndarray, ...]          # R_k,l
    weights: np.ndarray
    common_sinr: Dict[int, np.ndarray] = field(default_factory=dict)
    private_sinr: Tuple[np.ndarray, ...] = ()

    @property
    def common(self) -> np.ndarray:
        """R_c,l: per-stream minimum over the users that decode the common message."""
        if not self.common_per_user:
            return np.zeros(self.group.streams)
        return np.min(np.vstack(list(self.common_per_user.values())), axis=0)

    @property
    def fractions(self) -> np.ndarray:
        return self.group.fractions

    @property
    def common_sum(self) -> float:
        return float(np.sum(self.common))

    @property
    def private_sum(self) -> float:
        return float(sum(np.sum(r) for r in self.private))

    @property
    def sum_rate(self) -> float:
        return self.common_sum + self.private_sum

    @property
    def wsr(self) -> float:
        return weighted_sum_rate(self.common, self.private, self.weights, self.fractions)

    @property
    def user_totals(self) -> np.ndarray:
        """v_k sum_l R_c,l + sum_l R_k,l per user."""
        return self.fractions * self.common_sum + np.array([np.sum(r) for r in self.private])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": "sd-rsma/rate-report",
            "version": 1,
            "members": list(self.group.members),
            "label": self.group.label,
            "common_per_user": {str(k): r.tolist() for k, r in self.common_per_user.items()},
            "common": self.common.tolist(),
            "private": [r.tolist() for r in self.private],
            "user_totals": self.user_totals.tolist(),
            "weights": self.weights.tolist(),
            "fractions": self.fractions.tolist(),
            "sum_rate": self.sum_rate,
            "wsr": self.wsr,
        }


@dataclass(frozen=True, eq=False)
class StreamModel:
    """
    Scalar per-stream channels of a design with path loss and noise applied.

    cm_gain[k][l] = D_k,ll^2 / L_k, cm_leak[k][l, i] = |W_k,li|^2 / L_k,
    cm_noise[k][l] = sigma^2 (E_k^+ E_k^+H)_ll, pm_gain[k][l] = Sigma_k,ll^2 / L_k,
    pm_leak[k][l, i] = |W_c,k,li|^2 / L_k.
    """
    design: SdDesign
    cm_gain: Dict[int, np.ndarray]
    cm_leak: Dict[int, np.ndarray]
    cm_noise: Dict[int, np.ndarray]
    pm_gain: Tuple[np.ndarray, ...]
    pm_leak: Tuple[np.ndarray, ...]
    noise_var: float

    @classmethod
    def from_design(cls, design: SdDesign, channels: ChannelSet) -> "StreamModel":
        if len(design.private) != channels.num_users:
            raise DimensionMismatch("design and channel set disagree on the number of users")
        loss = channels.path_loss
        sigma2 = channels.noise_var
        cm_gain, cm_leak, cm_noise = {}, {}, {}
        if design.common is not None:
            for k in design.group.members:
                e_plus = design.common.detectors[k]
                cm_gain[k] = design.common.gains[k] ** 2 / loss[k]
                cm_leak[k] = np.abs(design.cm_interference[k]) ** 2 / loss[k]
                cm_noise[k] = sigma2 * np.sum(np.abs(e_plus) ** 2, axis=1)
        pm_gain = tuple(pp.singular_values ** 2 / loss[k] for k, pp in enumerate(design.private))
        pm_leak = tuple(np.abs(w) ** 2 / loss[k] for k, w in enumerate(design.pm_interference))
        return cls(design, cm_gain, cm_leak, cm_noise, pm_gain, pm_leak, sigma2)

    @property
    def group(self) -> CommonGroup:
        return self.design.group

    def common_sinr(self, user: int, powers: PowerAllocation) -> np.ndarray:
        interference = self.cm_leak[user] @ powers.private[user]
        return self.cm_gain[user] * powers.common / (interference + self.cm_noise[user])

    def private_sinr(self, user: int, powers: PowerAllocation) -> np.ndarray:
        interference = self.pm_leak[user] @ powers.common if powers.common.size else 0.0
        return self.pm_gain[user] * powers.private[user] / (interference + self.noise_var)

    def report(self, powers: PowerAllocation, weights: Optional[Sequence[float]] = None) -> RateReport:
        k_users = len(self.design.private)
        w = uniform_weights(k_users) if weights is None else check_weights(weights, k_users)
        cm_sinr = {k: self.common_sinr(k, powers) for k in self.group.members}
        pm_sinr = tuple(self.private_sinr(k, powers) for k in range(k_users))
        return RateReport(
            group=self.group,
            common_per_user={k: rate_from_sinr(s) for k, s in cm_sinr.items()},
            private=tuple(rate_from_sinr(s) for s in pm_sinr),
            weights=w,
            common_sinr=cm_sinr,
            private_sinr=pm_sinr,
        )


def _check_stream(size: int, stream: int, what: str) -> None:
    if not 0 <= stream < size:
        raise IndexError(f"{what} stream {stream} out of range [0, {size})")


def common_stream_rate(pre: PrecoderSet, channels: ChannelSet, user: int, stream: int) -> float:
    """R_c,l^k for a user that decodes the common message."""
    if user not in pre.group:
        raise IndexError(f"user {user} does not decode the common message")
    _check_stream(pre.group.streams, stream, "common")
    model = StreamModel.from_design(pre.design, channels)
    return float(rate_from_sinr(model.common_sinr(user, pre.powers)[stream]))


def common_rate(pre: PrecoderSet, channels: ChannelSet, stream: int) -> float:
    """R_c,l = min over K_c; 0 for the no-common-message baseline."""
    if pre.group.is_empty:
        return 0.0
    _check_stream(pre.group.streams, stream, "common")
    model = StreamModel.from_design(pre.design, channels)
    return float(min(rate_from_sinr(model.common_sinr(k, pre.powers)[stream]) for k in pre.group.members))


def private_stream_rate(pre: PrecoderSet, channels: ChannelSet, user: int, stream: int) -> float:
    if not 0 <= user < channels.num_users:
        raise IndexError(f"user {user} out of range")
    _check_stream(pre.design.user_antennas[user], stream, "private")
    model = StreamModel.from_design(pre.design, channels)
    return float(rate_from_sinr(model.private_sinr(user, pre.powers)[stream]))


def evaluate(pre: PrecoderSet, channels: ChannelSet, weights: Optional[Sequence[float]] = None) -> RateReport:
    """Closed-form rates for the channels the precoders were designed on."""
    return StreamModel.from_design(pre.design, channels).report(pre.powers, weights)


def _receiver_detectors(pre: PrecoderSet, channels: ChannelSet,
                        receiver_csi: ReceiverCsi) -> Tuple[Dict[int, np.ndarray], Tuple[np.ndarray, ...]]:
    design = pre.design
    if receiver_csi == ReceiverCsi.ESTIMATED:
        cm = {k: pre.cm_detector(k) for k in pre.group.members}
        pm = tuple(pre.pm_detector(k) for k in range(channels.num_users))
        return cm, pm
    # Users zero-force their own true effective channels.
    h = channels.true
    cm = {k: left_pseudo_inverse(h[k] @ design.common.direction) for k in pre.group.members}
    pm = tuple(left_pseudo_inverse(h[k] @ pp.direction) for k, pp in enumerate(design.private))
    return cm, pm


def _stream_sinr(response: np.ndarray, leakage: List[np.ndarray], detector: np.ndarray,
                 noise_var: float) -> np.ndarray:
    """Desired diagonal power over everything else that reaches each detector output."""
    desired = np.abs(np.diag(response)) ** 2
    interference = np.sum(np.abs(response) ** 2, axis=1) - desired
    for block in leakage:
        if block.size:
            interference = interference + np.sum(np.abs(block) ** 2, axis=1)
    noise = noise_var * np.sum(np.abs(detector) ** 2, axis=1)
    denom = np.maximum(interference, 0.0) + noise
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(denom > 0, desired / denom, np.where(desired > 0, np.inf, 0.0))
    return np.minimum(sinr, SINR_CAP)


def mismatched_sinrs(pre: PrecoderSet, channels: ChannelSet,
                     receiver_csi: ReceiverCsi = ReceiverCsi.ESTIMATED
                     ) -> Tuple[Dict[int, np.ndarray], Tuple[np.ndarray, ...]]:
    """Per-stream SINRs of the full linear model on the true channels."""
    return _model_sinrs(pre, channels, receiver_csi, channels.noise_var)


def _model_sinrs(pre: PrecoderSet, channels: ChannelSet, receiver_csi: ReceiverCsi,
                 sigma2: float) -> Tuple[Dict[int, np.ndarray], Tuple[np.ndarray, ...]]:
    if pre.design.bs_antennas != channels.bs_antennas or pre.design.user_antennas != channels.user_antennas:
        raise DimensionMismatch("precoder set and channel set have different dimensions")
    cm_det, pm_det = _receiver_detectors(pre, channels, receiver_csi)
    p_c = pre.common_precoder
    p_priv = pre.private_precoders

    cm_sinr: Dict[int, np.ndarray] = {}
    pm_sinr = []
    for k, h_k in enumerate(channels.true):
        a_k = h_k / np.sqrt(channels.path_loss[k])
        if k in pre.group:
            e = cm_det[k]
            cm_sinr[k] = _stream_sinr(e @ a_k @ p_c, [e @ a_k @ p for p in p_priv], e, sigma2)
        d = pm_det[k]
        leakage = [d @ a_k @ p for j, p in enumerate(p_priv) if j != k]
        if k not in pre.group and p_c.size:
            leakage.append(d @ a_k @ p_c)
        pm_sinr.append(_stream_sinr(d @ a_k @ p_priv[k], leakage, d, sigma2))
    return cm_sinr, tuple(pm_sinr)


def evaluate_mismatched(pre: PrecoderSet, channels: ChannelSet, weights: Optional[Sequence[float]] = None,
                        receiver_csi: ReceiverCsi = ReceiverCsi.ESTIMATED) -> RateReport:
    """Rates of precoders designed on the estimates, measured on the true channels."""
    cm_sinr, pm_sinr = mismatched_sinrs(pre, channels, receiver_csi)
    k_users = channels.num_users
    w = uniform_weights(k_users) if weights is None else check_weights(weights, k_users)
    return RateReport(
        group=pre.group,
        common_per_user={k: rate_from_sinr(s) for k, s in cm_sinr.items()},
        private=tuple(rate_from_sinr(s) for s in pm_sinr),
        weights=w,
        common_sinr=cm_sinr,
        private_sinr=pm_sinr,
    )


@dataclass(frozen=True, eq=False)
class TransmitFrame:
    common: np.ndarray               # s_c, M x n
    private: Tuple[np.ndarray, ...]  # s_k, M_k x n
    noise: Tuple[np.ndarray, ...]    # z_k, M_k x n

    @classmethod
    def draw(cls, rng: np.random.Generator, streams: int, user_antennas: Sequence[int],
             n_symbols: int, noise_var: float) -> "TransmitFrame":
        return cls(
            common=complex_gaussian(rng, (streams, n_symbols)),
            private=tuple(complex_gaussian(rng, (m, n_symbols)) for m in user_antennas),
            noise=tuple(complex_gaussian(rng, (m, n_symbols), noise_var) for m in user_antennas),
        )


@dataclass(frozen=True)
class OracleRecord:
    stream_id: str
    analytic_sinr: float
    measured_sinr: float

    @property
    def relative_error(self) -> float:
        if self.analytic_sinr == 0:
            return 0.0 if self.measured_sinr == 0 else float("inf")
        return abs(self.measured_sinr - self.analytic_sinr) / self.analytic_sinr


@dataclass(frozen=True)
class OracleReport:
    records: Tuple[OracleRecord, ...]
    n_symbols: int

    def max_relative_error(self) -> float:
        """Largest error over streams that carry power; silent streams only measure estimator noise."""
        return max((r.relative_error for r in self.records if r.analytic_sinr > 0), default=0.0)

    def by_id(self) -> Dict[str, OracleRecord]:
        return {r.stream_id: r for r in self.records}


def _measure(observed: np.ndarray, symbols: np.ndarray, coefficient: complex) -> float:
    """|g|^2 E|s|^2 over the power left once the exact desired term g * s is removed."""
    if coefficient == 0:
        return 0.0
    residual = observed - coefficient * symbols
    p_res = float(np.mean(np.abs(residual) ** 2))
    p_sig = float(np.abs(coefficient) ** 2 * np.mean(np.abs(symbols) ** 2))
    if p_res <= 0.0:
        return SINR_CAP
    return min(p_sig / p_res, SINR_CAP)


def symbol_oracle(pre: PrecoderSet, channels: ChannelSet, n_symbols: int = 100_000, seed: int = 0,
                  receiver_csi: ReceiverCsi = ReceiverCsi.ESTIMATED, noiseless: bool = False) -> OracleReport:
    """
    Send n_symbols Gaussian frames through the true channels and measure SINRs.

    Users in K_c apply E_k^+, then cancel the common message with their true
    channel and the transmitted s_c before applying the private detector.
    Each stream's desired gain is taken from the linear model, so the
    measurement only estimates the interference-plus-noise power. With
    noiseless=True the analytic SINRs drop the noise term too.
    """
    if n_symbols < MIN_ORACLE_SYMBOLS:
        raise ConfigError(f"oracle needs at least {MIN_ORACLE_SYMBOLS} symbols, got {n_symbols}")
    noise_var = 0.0 if noiseless else channels.noise_var
    cm_sinr, pm_sinr = _model_sinrs(pre, channels, receiver_csi, noise_var)
    cm_det, pm_det = _receiver_detectors(pre, channels, receiver_csi)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    frame = TransmitFrame.draw(rng, pre.group.streams, channels.user_antennas, n_symbols, noise_var)
    common_part = pre.common_precoder @ frame.common
    x = common_part + sum(p @ s for p, s in zip(pre.private_precoders, frame.private))

    records: List[OracleRecord] = []
    for k, h_k in enumerate(channels.true):
        a_k = h_k / np.sqrt(channels.path_loss[k])
        y = a_k @ x + frame.noise[k]
        if k in pre.group:
            y_cm = cm_det[k] @ y
            gain = np.diag(cm_det[k] @ a_k @ pre.common_precoder)
            for l in range(pre.group.streams):
                records.append(OracleRecord(f"cm:u{k + 1}:s{l + 1}", float(cm_sinr[k][l]),
                                            _measure(y_cm[l], frame.common[l], gain[l])))
            y = y - a_k @ common_part
        y_pm = pm_det[k] @ y
        gain = np.diag(pm_det[k] @ a_k @ pre.private_precoders[k])
        for l in range(h_k.shape[0]):
            records.append(OracleRecord(f"pm:u{k + 1}:s{l + 1}", float(pm_sinr[k][l]),
                                        _measure(y_pm[l], frame.private[k][l], gain[l])))
    report = OracleReport(tuple(records), n_symbols)
    logger.debug("oracle on %s with %d symbols: largest relative error %.3g", pre.group.label, n_symbols,
                 report.max_relative_error())
    return report
