"""
Weighted-sum-rate power allocation by successive convex approximation.

Every rate is log2(S + I + N) - log2(I + N). Around an anchor the second log
is replaced by its tangent, which gives a concave lower bound of the rate
that is tight at the anchor. Each SCA iteration maximizes the sum of those
bounds under the simplified power constraint

    sum_l c_l p_c,l + sum_k sum_l p_k,l <= P_T,   p >= 0,

with one epigraph variable t_l per common stream standing in for the
minimum over the users that decode it. The convex inner problem is handed
to SLSQP in normalized powers x = p / P_T.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .channel_model import ChannelSet
from .errors import ConfigError, DecompositionError, DomainError, RankDeficiency, SolverFailure
from .precoder import CommonGroup, PowerAllocation, PrecoderSet, SdDesign, build_design
from .rate_engine import RateReport, StreamModel, evaluate_mismatched
from .schemas import ReceiverCsi, SubsetSelection

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
MAX_SUBSET_USERS = 12
TIE_TOL = 1e-9
INNER_MAX_ITER = 500
INNER_FTOL = 1e-12
BISECTION_STEPS = 200


@dataclass(frozen=True, eq=False)
class WsrInstance:
    """One power-allocation problem: a fixed design, user weights and a budget in mW."""
    model: StreamModel
    weights: np.ndarray
    p_total: float

    @classmethod
    def build(cls, channels: ChannelSet, group: CommonGroup, p_total: float,
              weights: Optional[Sequence[float]] = None, use_estimated: bool = False) -> "WsrInstance":
        design = build_design(channels, group, use_estimated)
        return cls.from_design(design, channels, p_total, weights)

    @classmethod
    def from_design(cls, design: SdDesign, channels: ChannelSet, p_total: float,
                    weights: Optional[Sequence[float]] = None) -> "WsrInstance":
        if p_total < 0 or not np.isfinite(p_total):
            raise ConfigError(f"power budget must be finite and >= 0, got {p_total}")
        k_users = channels.num_users
        w = np.full(k_users, 1.0) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if w.size != k_users or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("weights must be nonnegative, one per user, with a positive sum")
        # Only the direction of w matters to the maximizer.
        return cls(StreamModel.from_design(design, channels), w / w.sum(), float(p_total))

    @property
    def design(self) -> SdDesign:
        return self.model.design

    @property
    def group(self) -> CommonGroup:
        return self.model.group

    @property
    def num_powers(self) -> int:
        return self.group.streams + sum(self.design.user_antennas)

    @property
    def cost(self) -> np.ndarray:
        """Constraint weights over the stacked power vector."""
        return np.concatenate([self.design.common_cost, np.ones(sum(self.design.user_antennas))])

    @property
    def common_weight(self) -> float:
        """sum_k w_k v_k, the weight of every common-stream rate."""
        return float(np.dot(self.weights, self.group.fractions))

    def offsets(self) -> List[int]:
        """Start of each user's private block in the stacked power vector."""
        return list(np.cumsum([self.group.streams, *self.design.user_antennas])[:-1])

    def powers(self, vec: np.ndarray) -> PowerAllocation:
        return PowerAllocation.from_vector(vec, self.group.streams, self.design.user_antennas)

    def report(self, powers: PowerAllocation) -> RateReport:
        return self.model.report(powers, self.weights)


def _check_nonnegative(*allocations: PowerAllocation) -> None:
    for a in allocations:
        if any(arr.size and arr.min() < 0 for arr in (a.common, *a.private)):
            raise DomainError("stream powers must be nonnegative")


class Linearization:
    """Tangent bounds of all rates around one anchor, with gradients over the stacked powers."""

    def __init__(self, instance: WsrInstance, anchor: PowerAllocation):
        _check_nonnegative(anchor)
        self.instance = instance
        m = instance.model
        self._offsets = instance.offsets()
        self.cm_base = {k: m.cm_leak[k] @ anchor.private[k] + m.cm_noise[k] for k in m.group.members}
        self.pm_base = []
        for k in range(len(m.pm_gain)):
            leak = m.pm_leak[k] @ anchor.common if anchor.common.size else 0.0
            self.pm_base.append(leak + m.noise_var)

    def _block(self, user: int) -> slice:
        start = self._offsets[user]
        return slice(start, start + self.instance.design.user_antennas[user])

    def common(self, user: int, powers: PowerAllocation, full: bool = True,
               grad: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        m = self.instance.model
        base = self.cm_base[user]
        interference = m.cm_leak[user] @ powers.private[user]
        total = m.cm_gain[user] * powers.common + interference + m.cm_noise[user]
        value = np.log2(total) - interference / (LN2 * base)
        if full:
            value = value - np.log2(base) + (base - m.cm_noise[user]) / (LN2 * base)
        if not grad:
            return value, None
        jac = np.zeros((value.size, self.instance.num_powers))
        jac[:, :value.size] = np.diag(m.cm_gain[user] / (LN2 * total))
        jac[:, self._block(user)] = m.cm_leak[user] * (1.0 / (LN2 * total) - 1.0 / (LN2 * base))[:, None]
        return value, jac

    def private(self, user: int, powers: PowerAllocation, full: bool = True,
                grad: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        m = self.instance.model
        base = self.pm_base[user]
        interference = m.pm_leak[user] @ powers.common if powers.common.size else np.zeros(powers.private[user].size)
        total = m.pm_gain[user] * powers.private[user] + interference + m.noise_var
        value = np.log2(total) - interference / (LN2 * base)
        if full:
            value = value - np.log2(base) + (base - m.noise_var) / (LN2 * base)
        if not grad:
            return value, None
        jac = np.zeros((value.size, self.instance.num_powers))
        jac[:, self._block(user)] = np.diag(m.pm_gain[user] / (LN2 * total))
        if powers.common.size:
            jac[:, :powers.common.size] = (m.pm_leak[user]
                                           * (1.0 / (LN2 * total) - 1.0 / (LN2 * base))[:, None])
        return value, jac

    def objective(self, powers: PowerAllocation) -> float:
        """Weighted sum of the bounds with the common minimum taken exactly."""
        inst = self.instance
        value = 0.0
        if not inst.group.is_empty:
            per_user = np.vstack([self.common(k, powers)[0] for k in inst.group.members])
            value += inst.common_weight * float(np.sum(per_user.min(axis=0)))
        for k, w_k in enumerate(inst.weights):
            value += w_k * float(np.sum(self.private(k, powers)[0]))
        return value


def surrogate_common_rate(instance: WsrInstance, powers: PowerAllocation, anchor: PowerAllocation,
                          user: int, stream: int, full: bool = True) -> float:
    """
    Concave lower bound of R_c,l^k around the anchor.

    With full=False the anchor-only constant is dropped, leaving
    log2(S + I + N) - I / (ln2 (I_0 + N)).
    """
    _check_nonnegative(powers)
    if user not in instance.group:
        raise IndexError(f"user {user} does not decode the common message")
    if not 0 <= stream < instance.group.streams:
        raise IndexError(f"common stream {stream} out of range")
    return float(Linearization(instance, anchor).common(user, powers, full)[0][stream])


def surrogate_private_rate(instance: WsrInstance, powers: PowerAllocation, anchor: PowerAllocation,
                           user: int, stream: int, full: bool = True) -> float:
    _check_nonnegative(powers)
    if not 0 <= stream < instance.design.user_antennas[user]:
        raise IndexError(f"private stream {stream} out of range")
    return float(Linearization(instance, anchor).private(user, powers, full)[0][stream])


def project_power(vec: np.ndarray, cost: np.ndarray, budget: float) -> np.ndarray:
    """
    Euclidean projection onto {x >= 0, cost . x <= budget}.

    The result is max(vec - lam * cost, 0) with the multiplier lam >= 0 found
    by bisection so that the budget holds with equality when it binds.
    """
    vec = np.asarray(vec, dtype=float)
    clipped = np.clip(vec, 0.0, None)
    if budget <= 0:
        return np.zeros_like(clipped)
    if np.dot(cost, clipped) <= budget:
        return clipped
    lo, hi = 0.0, float(np.max(clipped / np.where(cost > 0, cost, np.inf)))
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if np.dot(cost, np.clip(vec - mid * cost, 0.0, None)) > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.clip(vec - hi * cost, 0.0, None)


@dataclass(frozen=True, eq=False)
class InnerSolution:
    powers: PowerAllocation
    value: float
    iterations: int = 0
    status: int = 0


def solve_inner(instance: WsrInstance, anchor: PowerAllocation) -> InnerSolution:
    """Maximize the tangent-bound WSR around the anchor. Never returns a point worse than the anchor."""
    lin = Linearization(instance, anchor)
    anchor_value = lin.objective(anchor)
    if instance.p_total == 0:
        return InnerSolution(anchor, anchor_value)

    pt = instance.p_total
    n_p = instance.num_powers
    group = instance.group
    n_t = group.streams
    a_c = instance.common_weight
    cost = instance.cost

    x0 = project_power(anchor.as_vector() / pt, cost, 1.0)

    def start_point(x):
        p = instance.powers(x * pt)
        t = (np.vstack([lin.common(k, p)[0] for k in group.members]).min(axis=0)
             if n_t else np.zeros(0))
        return np.concatenate([x, t])

    def unpack(z):
        return instance.powers(np.clip(z[:n_p], 0.0, None) * pt), z[n_p:]

    def neg_objective(z):
        powers, t = unpack(z)
        value = a_c * float(np.sum(t))
        grad = np.zeros(z.size)
        grad[n_p:] = a_c
        for k, w_k in enumerate(instance.weights):
            v, jac = lin.private(k, powers, grad=True)
            value += w_k * float(np.sum(v))
            grad[:n_p] += w_k * pt * jac.sum(axis=0)
        return -value, -grad

    def epigraph(z):
        powers, t = unpack(z)
        return np.concatenate([lin.common(k, powers)[0] - t for k in group.members])

    def epigraph_jac(z):
        powers, _ = unpack(z)
        rows = []
        for k in group.members:
            _, jac = lin.common(k, powers, grad=True)
            rows.append(np.hstack([pt * jac, -np.eye(n_t)]))
        return np.vstack(rows)

    budget_row = np.concatenate([-cost, np.zeros(n_t)])
    constraints = [{"type": "ineq", "fun": lambda z: 1.0 + budget_row @ z, "jac": lambda z: budget_row}]
    if n_t:
        constraints.append({"type": "ineq", "fun": epigraph, "jac": epigraph_jac})
    bounds = [(0.0, None)] * n_p + [(None, None)] * n_t

    # Half the budget spread evenly; strictly inside every bound.
    interior = 0.5 * np.ones(n_p) / float(np.sum(cost))
    starts = [x0, interior] if np.any(x0 > 0) else [interior, x0]
    attempts = []
    for x_start in starts:
        result = minimize(neg_objective, start_point(x_start), jac=True, method="SLSQP", bounds=bounds,
                          constraints=constraints, options={"maxiter": INNER_MAX_ITER, "ftol": INNER_FTOL})
        attempts.append({"status": int(result.status), "message": str(result.message), "nit": int(result.nit)})
        if result.success and np.all(np.isfinite(result.x)):
            break
        logger.debug("SLSQP start %d on %s stopped with status %s (%s)", len(attempts), instance.group.label,
                     result.status, result.message)
    else:
        raise SolverFailure("inner problem did not converge", diagnostics={"attempts": attempts})

    candidate = instance.powers(project_power(result.x[:n_p], cost, 1.0) * pt)
    value = lin.objective(candidate)
    if not np.isfinite(value):
        raise SolverFailure("inner objective is not finite", diagnostics={"attempts": attempts})
    if len(attempts) > 1:
        logger.warning("SLSQP needed %d starts on %s", len(attempts), instance.group.label)
    if value < anchor_value:
        return InnerSolution(anchor, anchor_value, int(result.nit), int(result.status))
    return InnerSolution(candidate, value, int(result.nit), int(result.status))


@dataclass(frozen=True, eq=False)
class ScaState:
    iteration: int
    powers: PowerAllocation
    surrogate_value: float
    true_wsr: float


@dataclass(frozen=True, eq=False)
class ScaOutcome:
    instance: WsrInstance
    powers: PowerAllocation
    report: RateReport
    trace: Tuple[ScaState, ...]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def surrogate_trace(self) -> List[float]:
        return [s.surrogate_value for s in self.trace]

    def precoders(self) -> PrecoderSet:
        return self.instance.design.load(self.powers, self.instance.p_total)


def run_sca(instance: WsrInstance, epsilon: float = 1e-6, max_iter: int = 500) -> ScaOutcome:
    """
    Iterate tangent-bound maximizations from p = 0 until the optimum moves
    by at most epsilon. The report uses the exact rates at the final powers.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")

    powers = instance.design.zero_powers()
    trace: List[ScaState] = []
    previous: Optional[float] = None
    for n in range(1, max_iter + 1):
        try:
            sol = solve_inner(instance, powers)
        except SolverFailure as e:
            raise SolverFailure(f"SCA iteration {n}: {e}", diagnostics=e.diagnostics,
                                trace=[s.surrogate_value for s in trace]) from e
        powers = sol.powers
        trace.append(ScaState(n, powers, sol.value, instance.report(powers).wsr))
        logger.debug("SCA %s iteration %d: surrogate %.9f", instance.group.label, n, sol.value)
        if instance.p_total == 0:
            break
        if not np.any(powers.as_vector() > 0):
            # Any private power beats silence, so a zero iterate is a stall.
            raise SolverFailure(f"SCA iteration {n} left every stream at zero power",
                                diagnostics={"status": sol.status, "nit": sol.iterations},
                                trace=[s.surrogate_value for s in trace])
        if previous is not None and abs(sol.value - previous) <= epsilon:
            break
        previous = sol.value
    else:
        raise SolverFailure(f"SCA did not converge in {max_iter} iterations",
                            diagnostics={"epsilon": epsilon}, trace=[s.surrogate_value for s in trace])

    logger.debug("SCA for %s converged in %d iterations (WSR %.6f)", instance.group.label, len(trace),
                 trace[-1].true_wsr)
    return ScaOutcome(instance, powers, instance.report(powers), tuple(trace))


@dataclass(frozen=True, eq=False)
class SubsetSearchResult:
    """
    Outcome of trying every candidate common group.

    `table` holds the SR each candidate was ranked by, `evaluated` the SR on
    the true channels (identical under perfect CSI).
    """
    winner: CommonGroup
    table: Dict[Tuple[int, ...], float]
    evaluated: Dict[Tuple[int, ...], float]
    reports: Dict[Tuple[int, ...], RateReport]
    outcomes: Dict[Tuple[int, ...], ScaOutcome]
    failures: Dict[Tuple[int, ...], str] = field(default_factory=dict)

    @property
    def powers(self) -> PowerAllocation:
        return self.outcomes[self.winner.members].powers

    @property
    def report(self) -> RateReport:
        return self.reports[self.winner.members]

    @property
    def sum_rate(self) -> float:
        return self.evaluated[self.winner.members]


def candidate_groups(user_antennas: Sequence[int], include_empty: bool = True) -> List[CommonGroup]:
    """Every nonempty subset of users, plus the no-common-message baseline first."""
    k_users = len(user_antennas)
    if k_users > MAX_SUBSET_USERS:
        raise ConfigError(f"subset enumeration is limited to {MAX_SUBSET_USERS} users, got {k_users}")
    groups = [CommonGroup.empty(k_users)] if include_empty else []
    for size in range(1, k_users + 1):
        groups.extend(CommonGroup.of(c, user_antennas) for c in itertools.combinations(range(k_users), size))
    return groups


def _pick_winner(scores: Dict[Tuple[int, ...], float]) -> Tuple[int, ...]:
    best = max(scores.values())
    return min(key for key, sr in scores.items() if sr >= best - TIE_TOL)


def subset_search(channels: ChannelSet, p_total: float, weights: Optional[Sequence[float]] = None,
                  epsilon: float = 1e-6, max_iter: int = 500, use_estimated: bool = False,
                  candidates: Optional[Iterable[CommonGroup]] = None,
                  receiver_csi: ReceiverCsi = ReceiverCsi.ESTIMATED,
                  selection: SubsetSelection = SubsetSelection.EVALUATED) -> SubsetSearchResult:
    """
    Optimize powers for each candidate common group and keep the best SR.

    With use_estimated the BS designs and optimizes on the estimates; the SR
    is then evaluated on the true channels, and `selection` decides which of
    the two SRs ranks the candidates. Candidates whose precoders cannot be
    built or whose optimization fails are logged and skipped.
    """
    if channels.num_users > MAX_SUBSET_USERS:
        raise ConfigError(f"subset enumeration is limited to {MAX_SUBSET_USERS} users, got {channels.num_users}")
    groups = candidate_groups(channels.user_antennas) if candidates is None else list(candidates)

    table: Dict[Tuple[int, ...], float] = {}
    evaluated: Dict[Tuple[int, ...], float] = {}
    reports: Dict[Tuple[int, ...], RateReport] = {}
    outcomes: Dict[Tuple[int, ...], ScaOutcome] = {}
    failures: Dict[Tuple[int, ...], str] = {}

    for group in groups:
        key = group.members
        try:
            instance = WsrInstance.build(channels, group, p_total, weights, use_estimated)
            outcome = run_sca(instance, epsilon, max_iter)
        except (RankDeficiency, DecompositionError, SolverFailure) as e:
            logger.warning("Skipping common group %s: %s", group.label, e)
            failures[key] = f"{type(e).__name__}: {e}"
            continue

        if use_estimated:
            report = evaluate_mismatched(outcome.precoders(), channels, instance.weights, receiver_csi)
        else:
            report = outcome.report
        outcomes[key] = outcome
        reports[key] = report
        evaluated[key] = report.sum_rate
        ranked_by_model = use_estimated and selection == SubsetSelection.ESTIMATED
        table[key] = outcome.report.sum_rate if ranked_by_model else report.sum_rate

    if not table:
        raise SolverFailure("no common-group candidate could be solved", diagnostics=failures)

    winner = _pick_winner(table)
    return SubsetSearchResult(
        winner=CommonGroup.of(winner, channels.user_antennas) if winner else CommonGroup.empty(channels.num_users),
        table=table,
        evaluated=evaluated,
        reports=reports,
        outcomes=outcomes,
        failures=failures,
    )
