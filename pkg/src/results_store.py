"""
File outputs of a simulation run.

Everything lives under one output directory:

    sum_rates.csv            one row per (scheme, P_T, CSI mode)
    plot_data.json           series[scheme][csi_mode] = {x, y, ci, trials}
    channels_<tag>.json      a ChannelSet
    precoders_<tag>.json     a PrecoderSet
    report_<tag>.json        a RateReport plus run metadata
    oracle_<tag>.csv         analytic vs measured SINR per stream
    sca_trace_<tag>.csv      SCA convergence trace
    run_log.md               human-readable log, one section per run

Writes go through a FileLock next to the target and run in a worker thread.
Numbers are printed with a fixed format so equal results give equal bytes.
"""

import asyncio
import csv
import io
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from filelock import FileLock, Timeout

from .channel_model import ChannelSet
from .config import settings
from .errors import ConfigError, OutputError
from .precoder import PrecoderSet
from .rate_engine import OracleReport, RateReport
from .schemas import SimResult

logger = logging.getLogger(__name__)

SUM_RATES_FILE = "sum_rates.csv"
PLOT_DATA_FILE = "plot_data.json"
RUN_LOG_FILE = "run_log.md"

SUM_RATE_COLUMNS = ["scheme", "pt_dbm", "csi_mode", "mean_sr_bpcu", "ci_halfwidth", "trials",
                    "subset_winner_mode"]
ORACLE_COLUMNS = ["stream_id", "analytic_sinr", "measured_sinr", "relative_error"]
TRACE_COLUMNS = ["iteration", "surrogate_optimum", "true_wsr"]


def fmt(x: float) -> str:
    """Deterministic text for a float."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10g}"


def _finite_or_none(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None


def _csv_text(columns: List[str], rows: List[List[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def sum_rates_csv(result: SimResult) -> str:
    rows = [[c.scheme.value, fmt(c.pt_dbm), c.csi_mode.value, fmt(c.mean_sr_bpcu), fmt(c.ci_halfwidth),
             str(c.trials), c.subset_winner_mode] for c in result.cells]
    return _csv_text(SUM_RATE_COLUMNS, rows)


def plot_data(result: SimResult) -> Dict[str, Any]:
    series: Dict[str, Dict[str, Dict[str, list]]] = {}
    for c in sorted(result.cells, key=lambda c: c.pt_dbm):
        s = series.setdefault(c.scheme.value, {}).setdefault(
            c.csi_mode.value, {"x": [], "y": [], "ci": [], "trials": []})
        s["x"].append(c.pt_dbm)
        s["y"].append(_finite_or_none(c.mean_sr_bpcu))
        s["ci"].append(_finite_or_none(c.ci_halfwidth))
        s["trials"].append(c.trials)
    return {
        "format": "sd-rsma/plot-data",
        "version": 1,
        "x_label": "P_T [dBm]",
        "y_label": "average sum rate [bits/channel use]",
        "series": series,
    }


class ResultsStore:
    """
    Reads and writes the files of one output directory.
    """

    def __init__(self, out_dir: Union[str, Path] = "results", lock_timeout: Optional[float] = None):
        self.out_dir = Path(out_dir)
        self.lock_timeout = settings.SIM_LOCK_TIMEOUT if lock_timeout is None else lock_timeout
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"cannot create output directory ({e.strerror})", str(self.out_dir)) from e

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _lock(self, target: Path) -> FileLock:
        return FileLock(str(target.with_name(target.name + ".lock")), timeout=self.lock_timeout)

    def _write_locked(self, target: Path, render: Callable[[Optional[str]], str]) -> None:
        """render gets the current content (None when absent) and returns the new one."""
        try:
            with self._lock(target):
                current = target.read_text(encoding="utf-8") if target.exists() else None
                target.write_text(render(current), encoding="utf-8")
        except Timeout as e:
            raise OutputError("timed out waiting for the file lock", str(target)) from e
        except OSError as e:
            raise OutputError(f"cannot write ({e.strerror})", str(target)) from e

    async def _write(self, name: str, text: str) -> Path:
        target = self.path(name)
        await asyncio.to_thread(self._write_locked, target, lambda _: text)
        logger.debug("Wrote %s", target)
        return target

    async def write_sum_rates(self, result: SimResult) -> Path:
        return await self._write(SUM_RATES_FILE, sum_rates_csv(result))

    async def write_plot_data(self, result: SimResult) -> Path:
        return await self._write(PLOT_DATA_FILE, _json_text(plot_data(result)))

    async def write_channels(self, tag: str, channels: ChannelSet) -> Path:
        return await self._write(f"channels_{tag}.json", _json_text(channels.to_dict()))

    async def write_precoders(self, tag: str, pre: PrecoderSet) -> Path:
        return await self._write(f"precoders_{tag}.json", _json_text(pre.to_dict()))

    async def write_report(self, tag: str, report: RateReport, meta: Optional[Dict[str, Any]] = None) -> Path:
        payload = report.to_dict()
        if meta:
            payload["meta"] = meta
        return await self._write(f"report_{tag}.json", _json_text(payload))

    async def write_oracle(self, tag: str, oracle: OracleReport) -> Path:
        rows = [[r.stream_id, fmt(r.analytic_sinr), fmt(r.measured_sinr), fmt(r.relative_error)]
                for r in oracle.records]
        return await self._write(f"oracle_{tag}.csv", _csv_text(ORACLE_COLUMNS, rows))

    async def write_sca_trace(self, tag: str, trace) -> Path:
        """trace: ScaState items with iteration, surrogate_value and true_wsr."""
        rows = [[str(s.iteration), fmt(s.surrogate_value), fmt(s.true_wsr)] for s in trace]
        return await self._write(f"sca_trace_{tag}.csv", _csv_text(TRACE_COLUMNS, rows))

    async def append_run_log(self, result: SimResult) -> Path:
        target = self.path(RUN_LOG_FILE)

        def render(current: Optional[str]) -> str:
            head = current if current is not None else "# Simulation runs\n\n---\n\n"
            return head + self._format_run(result)

        await asyncio.to_thread(self._write_locked, target, render)
        return target

    def _format_run(self, result: SimResult) -> str:
        cfg = result.config
        ch = cfg.channel
        md = f"## Run: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n\n"
        md += f"- **Users**: K={ch.num_users}, M_k={ch.user_antennas}, N={ch.bs_antennas}\n"
        md += f"- **Geometry**: d={ch.distances_m} m, alpha={ch.correlation}, noise={ch.noise_dbm} dBm\n"
        md += f"- **CSI error**: mu^2={ch.csi_error_var}, modes={[m.value for m in cfg.csi_modes]}\n"
        md += f"- **Seed**: {cfg.master_seed}, threads={cfg.threads}\n"
        md += f"- **Runtime**: {result.runtime_s:.1f} s\n\n"
        md += "| scheme | P_T [dBm] | CSI | mean SR | CI | trials | winner |\n"
        md += "|---|---|---|---|---|---|---|\n"
        for c in result.cells:
            flag = " (capped)" if c.capped else ""
            md += (f"| {c.scheme.value} | {fmt(c.pt_dbm)} | {c.csi_mode.value} | {c.mean_sr_bpcu:.3f} | "
                   f"{c.ci_halfwidth:.3f}{flag} | {c.trials} | {c.subset_winner_mode} |\n")
        errors = [c for c in result.cells if c.error]
        if errors:
            md += "\n### Errors\n\n"
            for c in errors:
                md += f"- {c.scheme.value} @ {fmt(c.pt_dbm)} dBm ({c.csi_mode.value}): {c.error}\n"
        md += "\n---\n\n"
        return md

    async def load_channels(self, tag: str) -> ChannelSet:
        return await asyncio.to_thread(load_channel_set, self.path(f"channels_{tag}.json"))

    def list_tags(self, kind: str = "channels") -> List[str]:
        prefix = f"{kind}_"
        return sorted(f.stem[len(prefix):] for f in self.out_dir.glob(f"{prefix}*.json"))


def load_channel_set(path: Union[str, Path]) -> ChannelSet:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise OutputError(f"cannot read ({e.strerror})", str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return ChannelSet.from_dict(data)


async def emit_outputs(result: SimResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the sum-rate table, the plot data and a run-log section."""
    store = ResultsStore(out_dir)
    return {
        "sum_rates": await store.write_sum_rates(result),
        "plot_data": await store.write_plot_data(result),
        "run_log": await store.append_run_log(result),
    }
