from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from .errors import ConfigError


# 1. What gets simulated
class Scheme(str, Enum):
    SD_RSMA_EXCLUSION = "sd-rsma-exclusion"
    SD_RSMA_FULL = "sd-rsma-full"
    BD_BASELINE = "bd-baseline"


class CsiMode(str, Enum):
    PERFECT = "perfect"
    IMPERFECT = "imperfect"


class ReceiverCsi(str, Enum):
    """Where the users' detection matrices come from under imperfect CSI."""
    ESTIMATED = "estimated"
    TRUE = "true"


class SubsetSelection(str, Enum):
    """Which SR ranks the common-group candidates under imperfect CSI."""
    EVALUATED = "evaluated"
    ESTIMATED = "estimated"


def check_channel_topology(cfg: "ChannelConfig") -> None:
    """Raise ConfigError unless the topology is critically loaded and consistent."""
    k = cfg.num_users
    if len(cfg.user_antennas) != k:
        raise ConfigError(f"user_antennas has {len(cfg.user_antennas)} entries for {k} users")
    if len(cfg.distances_m) != k:
        raise ConfigError(f"distances_m has {len(cfg.distances_m)} entries for {k} users")
    if any(m < 1 for m in cfg.user_antennas):
        raise ConfigError("every user needs at least one antenna")
    if any(d <= 0 for d in cfg.distances_m):
        raise ConfigError("distances must be positive")
    if sum(cfg.user_antennas) != cfg.bs_antennas:
        raise ConfigError(
            f"not critically loaded: sum(M_k) = {sum(cfg.user_antennas)} != N = {cfg.bs_antennas}")
    if not 0.0 <= cfg.correlation <= 1.0:
        raise ConfigError(f"correlation {cfg.correlation} outside [0, 1]")
    if cfg.csi_error_var < 0:
        raise ConfigError("csi_error_var must be >= 0")


# 2. Channel description
class ChannelConfig(BaseModel):
    """Topology, geometry and CSI quality of one downlink."""
    num_users: int = Field(4, ge=1, description="K")
    user_antennas: List[int] = Field(default_factory=lambda: [4, 4, 4, 4], description="M_k per user.")
    bs_antennas: int = Field(16, ge=1, description="N; must equal sum(M_k).")
    distances_m: List[float] = Field(default_factory=lambda: [50.0] * 4, description="d_k, path loss L_k = d_k^2.")
    correlation: float = Field(0.0, ge=0.0, le=1.0, description="alpha of the paired correlated construction.")
    csi_error_var: float = Field(0.0, ge=0.0, description="mu^2 of the BS-side estimation error.")
    noise_dbm: float = Field(-35.0, description="sigma^2 in dBm.")
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _topology(self) -> "ChannelConfig":
        check_channel_topology(self)
        return self


# 3. Experiment description
class SimConfig(BaseModel):
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    pt_dbm: List[float] = Field(
        default_factory=lambda: [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0], min_length=1)
    schemes: List[Scheme] = Field(default_factory=lambda: list(Scheme), min_length=1)
    csi_modes: List[CsiMode] = Field(default_factory=lambda: [CsiMode.PERFECT], min_length=1)
    weights: Optional[List[float]] = Field(None, description="w_k; uniform 1/K when omitted.")
    epsilon: float = Field(1e-6, gt=0.0, description="SCA tolerance.")
    max_sca_iter: int = Field(500, ge=1)
    max_trials: int = Field(200, ge=10)
    min_trials: int = Field(10, ge=10, description="Trials before any stopping decision.")
    batch_size: int = Field(10, ge=1, description="Trials between stopping checks.")
    ci_halfwidth: float = Field(0.5, gt=0.0, description="Target CI half-width in BPCU.")
    ci_level: float = Field(0.99, gt=0.0, lt=1.0)
    master_seed: int = Field(2024, ge=0)
    threads: int = Field(1, ge=1)
    receiver_csi: ReceiverCsi = ReceiverCsi.ESTIMATED
    subset_selection: SubsetSelection = SubsetSelection.EVALUATED
    oracle_symbols: int = Field(0, ge=0, description="0 disables the oracle check; otherwise >= 10^4.")
    output_dir: str = "results"

    @model_validator(mode="after")
    def _consistency(self) -> "SimConfig":
        if self.weights is not None:
            if len(self.weights) != self.channel.num_users:
                raise ConfigError("one weight per user required")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ConfigError("weights must be nonnegative with a positive sum")
        if self.max_trials < self.min_trials:
            raise ConfigError("max_trials must be >= min_trials")
        if 0 < self.oracle_symbols < 10_000:
            raise ConfigError("oracle_symbols must be 0 or at least 10000")
        if len(set(self.pt_dbm)) != len(self.pt_dbm):
            raise ConfigError("pt_dbm values must be distinct")
        return self

    def user_weights(self) -> List[float]:
        k = self.channel.num_users
        if self.weights is None:
            return [1.0 / k] * k
        total = sum(self.weights)
        return [w / total for w in self.weights]


# 4. Aggregated output
class CellResult(BaseModel):
    """One (scheme, P_T, CSI mode) cell of a sweep."""
    scheme: Scheme
    pt_dbm: float
    csi_mode: CsiMode
    mean_sr_bpcu: float = 0.0
    ci_halfwidth: float = float("inf")
    trials: int = 0
    capped: bool = Field(False, description="Trial cap reached before the CI target.")
    subset_wins: Dict[str, int] = Field(default_factory=dict)
    subset_winner_mode: str = ""
    runtime_s: float = 0.0
    error: Optional[str] = None
    samples: List[float] = Field(default_factory=list, description="Per-trial SR in trial order.")


class SimResult(BaseModel):
    config: SimConfig
    cells: List[CellResult] = Field(default_factory=list)
    runtime_s: float = 0.0
    oracle_max_error: Dict[str, float] = Field(
        default_factory=dict, description="Largest analytic-vs-measured SINR error per (CSI mode, P_T) tag.")

    def cell(self, scheme: Scheme, pt_dbm: float, csi_mode: CsiMode) -> CellResult:
        for c in self.cells:
            if c.scheme == scheme and c.pt_dbm == pt_dbm and c.csi_mode == csi_mode:
                return c
        raise KeyError((scheme, pt_dbm, csi_mode))
