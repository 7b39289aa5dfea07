"""``wam`` command line: synth-data, ingest, pretrain, grid-search, finetune, evaluate, baselines, mapgen."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import synth
from .config import ConfigError, RunConfig, load_config
from .geodata.fusion import GridStore, SampleSet
from .geodata.normalize import NormalizationStats
from .geodata.variables import LABELS
from .mapgen import emit, predict_raster
from .models import FingerprintMismatch, checkpoint_load
from .training import (TrainingDiverged, evaluate_mae, finetune, grid_search, mae, pretrain,
                       train_test_split)

log = logging.getLogger("wam")

ARTIFACTS = "artifacts.json"


class UsageError(Exception):
    pass


# --- helpers -----------------------------------------------------------------

def _overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    """Map explicitly given flags onto config sections."""
    table = {
        "seed": ("data", "seed"), "encoder": ("model", "encoder"), "bins": ("model", "bins"),
        "lr": (args.command if args.command in ("pretrain", "finetune") else "pretrain", "lr"),
        "epochs": (args.command if args.command in ("pretrain", "finetune") else "pretrain", "epochs"),
        "batch_size": (args.command if args.command in ("pretrain", "finetune") else "pretrain", "batch_size"),
        "mode": ("finetune", "mode"), "n_unlabelled": ("data", "n_unlabelled"), "n_labelled": ("data", "n_labelled"),
    }
    out: dict[str, dict[str, str]] = {}
    for flag, (section, key) in table.items():
        value = getattr(args, flag, None)
        if value is not None:
            out.setdefault(section, {})[key] = str(value)
    return out


def _config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _record(out_dir: Path, command: str, files: list[Path], **info) -> None:
    """Keep ``artifacts.json`` in the output directory listing what each command wrote."""
    path = out_dir / ARTIFACTS
    doc = json.loads(path.read_text()) if path.exists() else {"artifacts": {}}
    doc["artifacts"][command] = {"files": sorted(str(f.relative_to(out_dir)) for f in files), **info}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _need(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _load_data(data_dir: str | Path) -> tuple[SampleSet, SampleSet, NormalizationStats]:
    data_dir = _need(data_dir, "data directory")
    for name in ("unlabelled.samples", "labelled.samples", "stats.json"):
        _need(data_dir / name, "ingested file (run `wam ingest` first)")
    return synth.load_samples(data_dir)


def _check_input(samples: SampleSet, cfg: RunConfig) -> None:
    size = samples.tensors.shape[1]
    if size != cfg.model.input_size:
        raise UsageError(f"samples are {size}x{size} but [model] input_size is {cfg.model.input_size}")


def _split(labelled: SampleSet, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if labelled.labels is None:
        raise UsageError("labelled sample set carries no labels")
    return train_test_split(len(labelled), cfg.finetune.test_fraction, cfg.data.seed)


def _write_mae(path: Path, rows: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", *LABELS])
        for name, values in rows.items():
            w.writerow([name, *(repr(float(v)) for v in values)])


# --- subcommands -------------------------------------------------------------

def cmd_synth_data(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    hotspot = tuple(args.hotspot) if args.hotspot else None
    scfg = replace(cfg.data.build(cfg.model.input_size), hotspot=hotspot)
    scenario = synth.generate(scfg, cfg.data.seed)
    manifest = synth.write_scenario(scenario, out)
    files = [manifest, out / "unlabelled.csv", out / "fires.csv"]
    _record(out, "synth-data", files, seed=cfg.data.seed, synthetic=True)
    print(json.dumps({"manifest": str(manifest), "grids": len(scenario.raw), "synthetic": True}))
    log.info("wrote %d synthetic raw grids to %s", len(scenario.raw), out)


def cmd_ingest(args, cfg: RunConfig) -> None:
    raw = _need(args.raw, "raw manifest")
    out = Path(args.out)
    paths = synth.ingest(raw, out)
    # relative so the index does not depend on where the run lives
    _record(out, "ingest", list(paths.values()), source=os.path.relpath(raw, out))
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    log.info("harmonised store and fused samples written to %s", out)


def cmd_pretrain(args, cfg: RunConfig) -> None:
    unl, _, stats = _load_data(args.data)
    _check_input(unl, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics = out / "pretrain.ckpt", out / "pretrain_metrics.csv"
    state, history = pretrain(unl.tensors, cfg.model.build(), cfg.pretrain, stats, metrics, ckpt)
    _record(out, "pretrain", [ckpt, metrics], best_epoch=state.meta["epoch"], masked_accuracy=state.meta["metric"])
    print(json.dumps({"checkpoint": str(ckpt), "best_epoch": state.meta["epoch"],
                      "masked_accuracy": state.meta["metric"], "epochs_run": len(history.rows)}))
    log.info("pretraining done: best masked accuracy %.4f at epoch %d", state.meta["metric"], state.meta["epoch"])


def cmd_grid_search(args, cfg: RunConfig) -> None:
    unl, _, _ = _load_data(args.data)
    _check_input(unl, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lrs = tuple(args.lrs) if args.lrs else (5e-5, 1e-4, 2e-4, 5e-4, 1e-3)
    bins = tuple(args.bins_list) if args.bins_list else (4, 8, 16, 32, 64)
    path = out / "grid_search.csv"
    table = grid_search(unl.tensors, cfg.model.build(), cfg.pretrain, lrs, bins, path)
    _record(out, "grid-search", [path], cells=len(table))
    print(json.dumps({"table": str(path), "cells": len(table)}))


def cmd_finetune(args, cfg: RunConfig) -> None:
    _, lab, _ = _load_data(args.data)
    _check_input(lab, cfg)
    pre = checkpoint_load(_need(args.checkpoint, "checkpoint"), cfg.model.build())
    train_ids, test_ids = _split(lab, cfg)
    mode = cfg.finetune.mode
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics = out / f"{mode}.ckpt", out / f"{mode}_metrics.csv"
    state, history = finetune(pre, lab.tensors[train_ids], lab.labels[train_ids], cfg.finetune.build(), mode,
                              metrics, ckpt)
    split = out / "split.json"
    split.write_text(json.dumps({"method": "seeded random", "seed": cfg.data.seed,
                                 "test_fraction": cfg.finetune.test_fraction,
                                 "train": train_ids.tolist(), "test": test_ids.tolist()}) + "\n")
    _record(out, f"finetune-{mode}", [ckpt, metrics, split], best_epoch=state.meta["epoch"])
    print(json.dumps({"checkpoint": str(ckpt), "mode": mode, "best_epoch": state.meta["epoch"],
                      "val_mae_normalized": state.meta["metric"]}))


def _read_predictions(path: Path, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``id, <six labels>`` (extra columns ignored); returns (ids, predictions)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    missing = [c for c in ("id", *LABELS) if c not in header]
    if missing:
        raise UsageError(f"{path}: missing column(s) {', '.join(missing)}")
    ids = np.array([int(r[header.index("id")]) for r in body])
    if np.any((ids < 0) | (ids >= n)):
        raise UsageError(f"{path}: sample ids outside 0..{n - 1}")
    preds = np.array([[float(r[header.index(c)]) for c in LABELS] for r in body])
    return ids, preds


def cmd_evaluate(args, cfg: RunConfig) -> None:
    _, lab, _ = _load_data(args.data)
    _, test_ids = _split(lab, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    if args.checkpoint:
        state = checkpoint_load(_need(args.checkpoint, "checkpoint"))
        name = args.name or Path(args.checkpoint).stem
        values = evaluate_mae(state, lab.tensors[test_ids], lab.labels[test_ids])
    else:
        ids, preds = _read_predictions(_need(args.predictions, "predictions file"), len(lab))
        lookup = dict(zip(ids.tolist(), preds))
        absent = [i for i in test_ids if i not in lookup]
        if absent:
            raise UsageError(f"predictions lack {len(absent)} test sample(s), e.g. id {absent[0]}")
        name = args.name or Path(args.predictions).stem
        values = mae(np.stack([lookup[i] for i in test_ids]), lab.labels[test_ids])
    path = out / f"mae_{name}.csv"
    _write_mae(path, {name: values})
    _record(out, f"evaluate-{name}", [path], test_samples=len(test_ids))
    print(json.dumps({"model": name, **{k: float(v) for k, v in zip(LABELS, values)}}))


def cmd_baselines(args, cfg: RunConfig) -> None:
    _, lab, _ = _load_data(args.data)
    train_ids, test_ids = _split(lab, cfg)
    results = bl.compare(lab.tensors[train_ids], lab.labels[train_ids], lab.tensors[test_ids], lab.labels[test_ids],
                         cfg.data.seed)
    networks = {}
    for ck in args.network or ():
        state = checkpoint_load(_need(ck, "checkpoint"))
        networks[Path(ck).stem] = evaluate_mae(state, lab.tensors[test_ids], lab.labels[test_ids])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "baselines.csv"
    bl.write_results(path, results, networks or None)
    _record(out, "baselines", [path])
    for method, values in {**results, **networks}.items():
        print(json.dumps({"model": method, **{k: float(v) for k, v in zip(LABELS, values)}}))


def cmd_mapgen(args, cfg: RunConfig) -> None:
    state = checkpoint_load(_need(args.checkpoint, "checkpoint"))
    if state.network.head is None:
        raise UsageError(f"{args.checkpoint} has no regression head; use a fine-tuned checkpoint")
    store = GridStore.load(_need(args.region, "region manifest"))
    try:
        day = date.fromisoformat(args.date)
    except ValueError:
        raise UsageError(f"--date must be YYYY-MM-DD, got {args.date!r}") from None
    if day not in store.sample_dates():
        raise UsageError(f"no complete channel set for {day}; available: {', '.join(map(str, store.sample_dates()))}")
    rasters = predict_raster(state, store, day, stride=args.stride, threads=args.threads)
    out = Path(args.out)
    files = []
    for r in rasters:
        files.append(emit(r, out, args.format))
        if args.format == "pgm":
            files.append(files[-1].with_suffix(".json"))
    _record(out, f"mapgen-{day.isoformat()}", files, stride=args.stride, format=args.format)
    print(json.dumps({"rasters": [str(f) for f in files if f.suffix != ".json"]}))


COMMANDS = {
    "synth-data": cmd_synth_data, "ingest": cmd_ingest, "pretrain": cmd_pretrain, "grid-search": cmd_grid_search,
    "finetune": cmd_finetune, "evaluate": cmd_evaluate, "baselines": cmd_baselines, "mapgen": cmd_mapgen,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [data], [model], [pretrain], [finetune] sections")
    common.add_argument("--seed", type=int, help="root seed (overrides [data] seed)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for map generation")
    common.add_argument("-q", "--quiet", action="store_true", help="only report errors on standard error")

    p = argparse.ArgumentParser(prog="wam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", parents=[common], help="generate a synthetic raw dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-unlabelled", dest="n_unlabelled", type=int)
    s.add_argument("--n-labelled", dest="n_labelled", type=int)
    s.add_argument("--hotspot", type=float, nargs=3, metavar=("LAT", "LON", "RADIUS"),
                   help="plant a hot spot raising every label (degrees)")

    s = sub.add_parser("ingest", parents=[common], help="harmonise raw grids and fuse samples")
    s.add_argument("--raw", required=True, help="raw manifest.json")
    s.add_argument("--out", required=True)

    for name, helptext in (("pretrain", "masked-patch pretraining"), ("grid-search", "learning rate x bins grid")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", required=True, help="ingested data directory")
        s.add_argument("--out", required=True)
        s.add_argument("--encoder", choices=("sequential", "residual"))
        s.add_argument("--lr", type=float)
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", dest="batch_size", type=int)
        if name == "pretrain":
            s.add_argument("--bins", type=int)
        else:
            s.add_argument("--lrs", type=float, nargs="+")
            s.add_argument("--bins", dest="bins_list", type=int, nargs="+")

    s = sub.add_parser("finetune", parents=[common], help="train the regression head (frozen) or the whole network")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("frozen", "finetune"))
    s.add_argument("--encoder", choices=("sequential", "residual"))
    s.add_argument("--bins", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="per-label test MAE in natural units")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="CSV with id and the six label columns")
    s.add_argument("--name")
    s.add_argument("--out", required=True)

    s = sub.add_parser("baselines", parents=[common], help="tree, forest, boosting and average baselines")
    s.add_argument("--data", required=True)
    s.add_argument("--network", nargs="*", help="fine-tuned checkpoints to include in the table")
    s.add_argument("--out", required=True)

    s = sub.add_parser("mapgen", parents=[common], help="per-label assessment rasters over a region")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--region", required=True, help="harmonised store manifest.json")
    s.add_argument("--date", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    s.add_argument("--stride", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, FingerprintMismatch, TrainingDiverged, FileNotFoundError, ValueError) as exc:
        print(f"wam {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
