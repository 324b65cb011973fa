import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from src.config import load_sim_config, settings
from src.errors import ConfigError, SdRsmaError
from src.harness import run_experiment
from src.results_store import ResultsStore, emit_outputs
from src.schemas import CsiMode

logger = logging.getLogger("simulate")


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="Monte-Carlo sum-rate sweeps for SD MIMO-RSMA precoding.")
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--schemes", type=_csv_list, help="comma-separated: sd-rsma-exclusion,sd-rsma-full,bd-baseline")
    p.add_argument("--pt-dbm", type=_float_list, help="comma-separated transmit powers in dBm")
    p.add_argument("--csi", choices=["perfect", "imperfect", "both"])
    p.add_argument("--max-trials", type=int)
    p.add_argument("--ci-bpcu", type=float, help="target CI half-width in bits/channel use")
    p.add_argument("--threads", type=int)
    p.add_argument("--log-level", default=None)
    return p


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.schemes is not None:
        overrides["schemes"] = args.schemes
    if args.pt_dbm is not None:
        overrides["pt_dbm"] = args.pt_dbm
    if args.csi is not None:
        modes = [CsiMode.PERFECT, CsiMode.IMPERFECT] if args.csi == "both" else [CsiMode(args.csi)]
        overrides["csi_modes"] = [m.value for m in modes]
    if args.max_trials is not None:
        overrides["max_trials"] = args.max_trials
    if args.ci_bpcu is not None:
        overrides["ci_halfwidth"] = args.ci_bpcu
    if args.threads is not None:
        overrides["threads"] = args.threads
    return overrides


def _error_line(e: BaseException) -> str:
    payload = {"status": "error", "type": type(e).__name__, "message": str(e)}
    path = getattr(e, "path", None)
    if path:
        payload["path"] = path
    return json.dumps(payload, ensure_ascii=False)


async def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or settings.SIM_LOG_LEVEL).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_sim_config(args.config, cli_overrides(args))
        store = ResultsStore(cfg.output_dir)

        def progress(text: str):
            logger.info(text)

        result = await run_experiment(cfg, on_progress=progress, store=store)
        paths = await emit_outputs(result, cfg.output_dir)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        print(_error_line(e), file=sys.stderr)
        return 2
    except (SdRsmaError, OSError) as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        print(_error_line(e), file=sys.stderr)
        return 1

    failed = [c for c in result.cells if c.error]
    print(json.dumps({"status": "ok", "cells": len(result.cells), "failed_cells": len(failed),
                      "runtime_s": round(result.runtime_s, 3),
                      "outputs": {k: str(v) for k, v in paths.items()}}))
    return 0


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
