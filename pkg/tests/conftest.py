from pathlib import Path

import pytest

from wam.cli import main
from wam.geodata.fusion import GridStore

TINY_CFG = """\
[data]
seed = 3
rows = 24
cols = 24
n_unlabelled = 48
n_labelled = 40
n_event_dates = 2

[model]
encoder = sequential
filters = 4,8,16
input_size = 16
patch = 8
bins = 8
hidden = 16

[pretrain]
epochs = 2
batch_size = 16
val_fraction = 0.25

[finetune]
epochs = 2
batch_size = 8
"""


def run_pipeline(root: Path, config_text: str = TINY_CFG, threads: int = 1,
                 train_flags: tuple[str, ...] = ()) -> dict[str, Path]:
    """Every CLI stage from synthetic data to rasters; ``train_flags`` go to pretrain and finetune."""
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "run.cfg"
    cfg.write_text(config_text)
    c = ["--config", str(cfg), "-q"]
    raw, data, runs, maps = root / "raw", root / "data", root / "runs", root / "maps"
    steps = [
        ["synth-data", "--out", str(raw)],
        ["ingest", "--raw", str(raw / "manifest.json"), "--out", str(data)],
        ["pretrain", "--data", str(data), "--out", str(runs), *train_flags],
        ["finetune", "--data", str(data), "--checkpoint", str(runs / "pretrain.ckpt"), "--out", str(runs),
         *train_flags],
        ["evaluate", "--data", str(data), "--checkpoint", str(runs / "finetune.ckpt"), "--out", str(runs)],
        ["baselines", "--data", str(data), "--network", str(runs / "finetune.ckpt"), "--out", str(runs)],
    ]
    for argv in steps:
        assert main([*argv, *c]) == 0, argv
    day = GridStore.load(data / "manifest.json").sample_dates()[0].isoformat()
    for fmt in ("pgm", "csv"):
        argv = ["mapgen", "--checkpoint", str(runs / "finetune.ckpt"), "--region", str(data / "manifest.json"),
                "--date", day, "--out", str(maps), "--format", fmt, "--threads", str(threads)]
        assert main([*argv, *c]) == 0, argv
    return {"raw": raw, "data": data, "runs": runs, "maps": maps, "config": cfg, "day": day}


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per criterion; the lines are repeated in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
