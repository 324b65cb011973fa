"""
Monte-Carlo sweeps over transmit power, CSI mode and scheme.

For every (CSI mode, P_T) point the harness draws trials in fixed batches.
One subset search per trial yields all three schemes: the best group
(sd-rsma-exclusion), the all-users group (sd-rsma-full) and the empty group
(bd-baseline). A cell stops once its Student-t confidence half-width reaches
the target or the trial cap is hit.
"""

import asyncio
import inspect
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .channel_model import ChannelSet, dbm_to_linear, generate_channels
from .errors import SdRsmaError
from .precoder import CommonGroup
from .rate_engine import symbol_oracle
from .results_store import ResultsStore
from .schemas import CellResult, CsiMode, Scheme, SimConfig, SimResult
from .sca_optimizer import SubsetSearchResult, candidate_groups, subset_search

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str], Union[None, Awaitable[None]]]


def ci_halfwidth(samples: Sequence[float], level: float) -> float:
    """Student-t half-width of the mean; inf below two samples."""
    n = len(samples)
    if n < 2:
        return float("inf")
    spread = float(np.std(samples, ddof=1))
    return float(stats.t.ppf(0.5 + level / 2.0, n - 1) * spread / np.sqrt(n))


def point_tag(csi_mode: CsiMode, pt_dbm: float) -> str:
    return f"{csi_mode.value}_{pt_dbm:g}dBm"


@dataclass
class TrialRecord:
    trial: int
    sum_rates: Dict[Scheme, float] = field(default_factory=dict)
    errors: Dict[Scheme, str] = field(default_factory=dict)
    winner: str = ""
    channels: Optional[ChannelSet] = None
    search: Optional[SubsetSearchResult] = None


@dataclass
class _Cell:
    scheme: Scheme
    samples: List[float] = field(default_factory=list)
    wins: Counter = field(default_factory=Counter)
    error: Optional[str] = None
    done: bool = False


def _candidates(schemes: Sequence[Scheme], user_antennas: Sequence[int]) -> List[CommonGroup]:
    if Scheme.SD_RSMA_EXCLUSION in schemes:
        return candidate_groups(user_antennas)
    groups = []
    if Scheme.BD_BASELINE in schemes:
        groups.append(CommonGroup.empty(len(user_antennas)))
    if Scheme.SD_RSMA_FULL in schemes:
        groups.append(CommonGroup.everyone(user_antennas))
    return groups


def evaluate_trial(cfg: SimConfig, csi_mode: CsiMode, pt_dbm: float, trial: int,
                   schemes: Sequence[Scheme], keep: bool = False) -> TrialRecord:
    """Draw trial `trial` and compute the SR of each requested scheme. Runs in a worker thread."""
    record = TrialRecord(trial)
    channel_cfg = cfg.channel.model_copy(update={"seed": cfg.master_seed})
    drawn = generate_channels(channel_cfg, trial)
    imperfect = csi_mode == CsiMode.IMPERFECT
    channels = drawn if imperfect else drawn.perfect()

    try:
        search = subset_search(
            channels,
            p_total=dbm_to_linear(pt_dbm),
            weights=cfg.user_weights(),
            epsilon=cfg.epsilon,
            max_iter=cfg.max_sca_iter,
            use_estimated=imperfect,
            candidates=_candidates(schemes, channels.user_antennas),
            receiver_csi=cfg.receiver_csi,
            selection=cfg.subset_selection,
        )
    except SdRsmaError as e:
        for scheme in schemes:
            record.errors[scheme] = f"trial {trial}: {type(e).__name__}: {e}"
        return record

    everyone = tuple(range(channels.num_users))
    for scheme in schemes:
        if scheme == Scheme.SD_RSMA_EXCLUSION:
            record.sum_rates[scheme] = search.sum_rate
            record.winner = search.winner.label
            continue
        key = everyone if scheme == Scheme.SD_RSMA_FULL else ()
        if key in search.evaluated:
            record.sum_rates[scheme] = search.evaluated[key]
        else:
            record.errors[scheme] = f"trial {trial}: {search.failures.get(key, 'candidate not evaluated')}"
    if keep:
        record.channels = channels
        record.search = search
    return record


class ExperimentRunner:
    """Runs one SimConfig; trials of a batch go to worker threads under a semaphore."""

    def __init__(self, cfg: SimConfig, on_progress: Optional[ProgressCallback] = None,
                 store: Optional[ResultsStore] = None):
        self.cfg = cfg
        self.on_progress = on_progress
        self.store = store
        self._semaphore = asyncio.Semaphore(cfg.threads)

    async def _safe_callback(self, message: str) -> None:
        if self.on_progress:
            result = self.on_progress(message)
            if inspect.isawaitable(result):
                await result

    async def _trial(self, csi_mode: CsiMode, pt_dbm: float, trial: int,
                     schemes: List[Scheme]) -> TrialRecord:
        keep = trial == 0 and (self.store is not None or self.cfg.oracle_symbols > 0)
        async with self._semaphore:
            return await asyncio.to_thread(evaluate_trial, self.cfg, csi_mode, pt_dbm, trial, schemes, keep)

    async def run(self) -> SimResult:
        started = time.perf_counter()
        result = SimResult(config=self.cfg)
        for csi_mode in self.cfg.csi_modes:
            for pt_dbm in self.cfg.pt_dbm:
                cells, oracle_error = await self._run_point(csi_mode, pt_dbm)
                result.cells.extend(cells)
                if oracle_error is not None:
                    result.oracle_max_error[point_tag(csi_mode, pt_dbm)] = oracle_error
        result.runtime_s = time.perf_counter() - started
        return result

    async def _run_point(self, csi_mode: CsiMode, pt_dbm: float):
        cfg = self.cfg
        started = time.perf_counter()
        cells = {s: _Cell(s) for s in cfg.schemes}
        oracle_error = None
        trial = 0
        while trial < cfg.max_trials and not all(c.done for c in cells.values()):
            active = [s for s, c in cells.items() if not c.done]
            end = min(trial + cfg.batch_size, cfg.max_trials)
            records = await asyncio.gather(*(self._trial(csi_mode, pt_dbm, t, active) for t in range(trial, end)))
            for rec in records:
                for scheme in active:
                    cell = cells[scheme]
                    if cell.done:
                        continue
                    if scheme in rec.errors:
                        cell.error = rec.errors[scheme]
                        cell.done = True
                        logger.warning("Cell %s @ %g dBm (%s) aborted: %s", scheme.value, pt_dbm,
                                       csi_mode.value, cell.error)
                        continue
                    cell.samples.append(rec.sum_rates[scheme])
                    if scheme == Scheme.SD_RSMA_EXCLUSION:
                        cell.wins[rec.winner] += 1
                if rec.search is not None:
                    oracle_error = await self._inspect_first_trial(csi_mode, pt_dbm, rec)
            trial = end

            for cell in cells.values():
                n = len(cell.samples)
                if not cell.done and n >= cfg.min_trials and ci_halfwidth(cell.samples, cfg.ci_level) <= cfg.ci_halfwidth:
                    cell.done = True
            await self._safe_callback(f"{csi_mode.value} {pt_dbm:g} dBm: {trial} trials")

        elapsed = time.perf_counter() - started
        return [self._summarize(c, csi_mode, pt_dbm, elapsed) for c in cells.values()], oracle_error

    def _summarize(self, cell: _Cell, csi_mode: CsiMode, pt_dbm: float, elapsed: float) -> CellResult:
        cfg = self.cfg
        n = len(cell.samples)
        ci = ci_halfwidth(cell.samples, cfg.ci_level)
        capped = cell.error is None and ci > cfg.ci_halfwidth
        if capped:
            logger.warning("Cell %s @ %g dBm (%s) hit the %d-trial cap with CI %.3f", cell.scheme.value,
                           pt_dbm, csi_mode.value, n, ci)

        k_users = cfg.channel.num_users
        if cell.scheme == Scheme.SD_RSMA_EXCLUSION:
            mode = min(cell.wins.items(), key=lambda kv: (-kv[1], kv[0]))[0] if cell.wins else ""
        elif cell.scheme == Scheme.SD_RSMA_FULL:
            mode = CommonGroup.everyone(cfg.channel.user_antennas).label
        else:
            mode = CommonGroup.empty(k_users).label

        out = CellResult(
            scheme=cell.scheme,
            pt_dbm=pt_dbm,
            csi_mode=csi_mode,
            mean_sr_bpcu=float(np.mean(cell.samples)) if n and cell.error is None else float("nan"),
            ci_halfwidth=ci if cell.error is None else float("nan"),
            trials=n,
            capped=capped,
            subset_wins=dict(sorted(cell.wins.items())),
            subset_winner_mode=mode,
            runtime_s=elapsed,
            error=cell.error,
            samples=list(cell.samples),
        )
        logger.info("Cell %s @ %g dBm (%s): SR %.3f +/- %.3f over %d trials", cell.scheme.value, pt_dbm,
                    csi_mode.value, out.mean_sr_bpcu, out.ci_halfwidth, n)
        return out

    async def _inspect_first_trial(self, csi_mode: CsiMode, pt_dbm: float, rec: TrialRecord) -> Optional[float]:
        """Store trial-0 artifacts of the winning group and run the symbol oracle on it."""
        search = rec.search
        tag = point_tag(csi_mode, pt_dbm)
        outcome = search.outcomes[search.winner.members]
        pre = outcome.precoders()
        if self.store is not None:
            await self.store.write_channels(tag, rec.channels)
            await self.store.write_precoders(tag, pre)
            await self.store.write_report(tag, search.report, {
                "winner": search.winner.label,
                "diagnostics": pre.design.diagnostics(rec.channels),
                "table": {CommonGroup.of(k, rec.channels.user_antennas).label if k else "{}": v
                          for k, v in search.table.items()},
            })
            await self.store.write_sca_trace(tag, outcome.trace)
        if self.cfg.oracle_symbols <= 0:
            return None
        oracle = await asyncio.to_thread(symbol_oracle, pre, rec.channels, self.cfg.oracle_symbols,
                                         self.cfg.master_seed, self.cfg.receiver_csi)
        if self.store is not None:
            await self.store.write_oracle(tag, oracle)
        worst = oracle.max_relative_error()
        logger.info("Oracle %s: largest SINR error %.2f%%", tag, 100 * worst)
        return worst


async def run_experiment(cfg: SimConfig, on_progress: Optional[ProgressCallback] = None,
                         store: Optional[ResultsStore] = None) -> SimResult:
    """
    Run the whole sweep.

    Args:
        cfg: Experiment description
        on_progress: Plain or async callable receiving one status line per batch
        store: When given, trial-0 artifacts of every point are written there

    Returns:
        SimResult with one CellResult per (CSI mode, P_T, scheme)
    """
    return await ExperimentRunner(cfg, on_progress, store).run()


def run_experiment_sync(cfg: SimConfig, on_progress: Optional[Callable[[str], None]] = None) -> SimResult:
    return asyncio.run(run_experiment(cfg, on_progress))
