"""
Scheme ordering on the two reference scenarios at desk scale.

Run with: pytest -m slow
"""

from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from src.config import load_sim_config
from src.harness import run_experiment
from src.schemas import CsiMode, Scheme

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
TRIALS = 200
PT_DBM = 30.0

pytestmark = pytest.mark.slow


async def sweep(name):
    cfg = load_sim_config(CONFIG_DIR / name, {
        "pt_dbm": [PT_DBM],
        "min_trials": TRIALS,
        "max_trials": TRIALS,
        "batch_size": 20,
        "threads": 4,
    })
    return await run_experiment(cfg)


def samples(result, scheme, csi=CsiMode.PERFECT):
    cell = result.cell(scheme, PT_DBM, csi)
    assert cell.error is None
    assert cell.trials == TRIALS
    return np.array(cell.samples)


def paired_gap_is_positive(a, b):
    return stats.ttest_rel(a, b, alternative="greater").pvalue < 0.05


def assert_imperfect_never_helps(result):
    for scheme in Scheme:
        perfect = samples(result, scheme, CsiMode.PERFECT).mean()
        imperfect = samples(result, scheme, CsiMode.IMPERFECT).mean()
        assert imperfect <= perfect


@pytest.mark.asyncio
async def test_correlated_equal_distance():
    result = await sweep("scenario_a.toml")
    excl = samples(result, Scheme.SD_RSMA_EXCLUSION)
    full = samples(result, Scheme.SD_RSMA_FULL)
    bd = samples(result, Scheme.BD_BASELINE)

    assert excl.mean() >= full.mean() >= bd.mean()
    assert paired_gap_is_positive(excl, bd)
    assert_imperfect_never_helps(result)


@pytest.mark.asyncio
async def test_uncorrelated_far_users():
    result = await sweep("scenario_b.toml")
    excl = samples(result, Scheme.SD_RSMA_EXCLUSION)
    full = samples(result, Scheme.SD_RSMA_FULL)
    bd = samples(result, Scheme.BD_BASELINE)

    assert abs(full.mean() - bd.mean()) <= 1.0
    assert paired_gap_is_positive(excl, bd)
    assert_imperfect_never_helps(result)
