import json
import shutil
import tempfile
from pathlib import Path

import pytest

from simulate import build_parser, cli_overrides, main


@pytest.fixture
def temp_dir():
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


def tiny_toml(path: Path, out: Path) -> Path:
    path.write_text(
        "pt_dbm = [10.0]\n"
        "schemes = [\"sd-rsma-exclusion\", \"bd-baseline\"]\n"
        "max_trials = 10\n"
        "batch_size = 5\n"
        f"output_dir = \"{out.as_posix()}\"\n"
        "\n[channel]\n"
        "num_users = 2\n"
        "user_antennas = [1, 1]\n"
        "bs_antennas = 2\n"
        "distances_m = [10.0, 20.0]\n",
        encoding="utf-8",
    )
    return path


def test_overrides_from_flags():
    args = build_parser().parse_args(["--seed", "3", "--pt-dbm", "10,20", "--csi", "both",
                                      "--schemes", "bd-baseline", "--ci-bpcu", "0.25"])
    assert cli_overrides(args) == {
        "master_seed": 3,
        "pt_dbm": [10.0, 20.0],
        "csi_modes": ["perfect", "imperfect"],
        "schemes": ["bd-baseline"],
        "ci_halfwidth": 0.25,
    }


def test_bad_number_list_is_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--pt-dbm", "10,abc"])


@pytest.mark.asyncio
async def test_missing_config_exits_with_2(temp_dir, capsys):
    code = await main(["--config", str(temp_dir / "missing.toml")])
    assert code == 2
    line = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert line["status"] == "error"
    assert line["type"] == "ConfigError"


@pytest.mark.asyncio
async def test_invalid_override_exits_with_2(temp_dir):
    config = tiny_toml(temp_dir / "tiny.toml", temp_dir / "out")
    assert await main(["--config", str(config), "--schemes", "noma"]) == 2


@pytest.mark.asyncio
async def test_successful_run_writes_outputs(temp_dir, capsys):
    out = temp_dir / "out"
    config = tiny_toml(temp_dir / "tiny.toml", out)

    code = await main(["--config", str(config), "--seed", "11"])

    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["status"] == "ok"
    assert summary["cells"] == 2
    assert (out / "sum_rates.csv").exists()
    assert (out / "plot_data.json").exists()
    assert (out / "run_log.md").exists()
    assert (out / "channels_perfect_10dBm.json").exists()
