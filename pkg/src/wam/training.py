"""Pretraining, the learning-rate x bins grid, fine-tuning and MAE evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Tensor, adam_step, mean_squared_error, no_grad, sparse_categorical_xent
from .geodata.normalize import NormalizationStats, minmax_fit
from .mim import batch_masks, expand_mask, masked_hits, patch_bin_targets
from .models import ModelConfig, ModelState, WAMNetwork, checkpoint_save

log = logging.getLogger(__name__)

GRID_LRS = (5e-5, 1e-4, 2e-4, 5e-4, 1e-3)
GRID_BINS = (4, 8, 16, 32, 64)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    lr: float = 2e-3
    epochs: int = 20
    batch_size: int = 32
    mask_prob: float = 0.5
    patience: int = 10
    val_fraction: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 16
    patience: int = 10
    val_fraction: float = 0.2
    test_fraction: float = 0.3
    seed: int = 0


def _batches(ids: np.ndarray, size: int):
    for start in range(0, len(ids), size):
        yield start // size, ids[start:start + size]


def _split(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split; returns (kept, held out) index arrays, both sorted."""
    perm = rng.permutation(n)
    n_out = max(1, int(round(n * fraction)))
    if n_out >= n:
        raise ValueError(f"cannot hold out {fraction:.0%} of {n} samples")
    return np.sort(perm[n_out:]), np.sort(perm[:n_out])


def train_test_split(n: int, test_fraction: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    return _split(n, test_fraction, np.random.default_rng([seed, 70]))


class MetricLog:
    """CSV metric log; values are written with repr so reruns compare byte for byte."""

    def __init__(self, path: str | Path | None):
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(["epoch", "loss", "metric", "saved"])

    def append(self, epoch: int, loss: float, metric: float, saved: bool) -> None:
        row = {"epoch": epoch, "loss": float(loss), "metric": float(metric), "saved": saved}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch, repr(float(loss)), repr(float(metric)), int(saved)])


def _step(params, lr: float, epoch: int, batch: int) -> None:
    try:
        adam_step(params, lr)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"{exc} at epoch {epoch}, batch {batch}") from exc


def _snapshot(net: WAMNetwork) -> dict[str, np.ndarray]:
    return {k: np.array(v, copy=True) for k, v in net.state_dict().items()}


def masked_accuracy_on(net: WAMNetwork, x: np.ndarray, targets: np.ndarray, masks: np.ndarray,
                       batch_size: int = 64) -> float:
    patch = net.config.patch
    hits = total = 0
    with no_grad():
        for _, idx in _batches(np.arange(len(x)), batch_size):
            xin = x[idx] * ~expand_mask(masks[idx], patch)
            logits = net.patch_logits(xin, "infer").data
            h, t = masked_hits(logits, targets[idx], masks[idx])
            hits += h
            total += t
    return hits / total


def evaluate_pretraining(state: ModelState, x: np.ndarray, mask_prob: float = 0.5, seed: int = 0) -> float:
    """Masked accuracy on ``x`` with a fixed evaluation mask per sample."""
    cfg = state.config
    targets = patch_bin_targets(x, cfg.scheme, cfg.patch)
    masks = batch_masks(np.arange(len(x)), cfg.grid, mask_prob, seed, -1)
    return masked_accuracy_on(state.network, x, targets, masks)


def pretrain(x: np.ndarray, model: ModelConfig, cfg: PretrainConfig, stats: NormalizationStats | None = None,
             log_path: str | Path | None = None, checkpoint_path: str | Path | None = None) -> tuple[ModelState, MetricLog]:
    """Masked-patch pretraining. ``x`` holds z-scored windows ``(N, H, W, C)``.

    Returns the best state by held-out masked accuracy and the metric log.
    """
    x = np.asarray(x)
    if len(x) == 0:
        raise ValueError("empty pretraining set")
    if x.shape[1:] != (model.input_size, model.input_size, model.channels):
        raise ValueError(f"samples of shape {x.shape[1:]} do not match the model input "
                         f"{(model.input_size, model.input_size, model.channels)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("pretraining samples contain non-finite values")
    x = x.astype(np.float32, copy=False) if x.dtype != np.float64 else x
    train_ids, val_ids = _split(len(x), cfg.val_fraction, np.random.default_rng([cfg.seed, 5]))
    targets = patch_bin_targets(x, model.scheme, model.patch)
    val_masks = batch_masks(val_ids, model.grid, cfg.mask_prob, cfg.seed, -1)
    x_val, t_val = x[val_ids], targets[val_ids]

    net = WAMNetwork(model, cfg.seed, decoder=True, head=False)
    params = net.params()
    metrics = MetricLog(log_path)
    best, best_state, stale = -np.inf, _snapshot(net), 0
    meta = {"phase": "pretrain", "monitor": "masked_accuracy", "lr": cfg.lr, "mask_prob": cfg.mask_prob}

    for epoch in range(1, cfg.epochs + 1):
        order = train_ids[np.random.default_rng([cfg.seed, 6, epoch]).permutation(len(train_ids))]
        losses = []
        for b, ids in _batches(order, cfg.batch_size):
            masks = batch_masks(ids, model.grid, cfg.mask_prob, cfg.seed, epoch)
            xin = x[ids] * ~expand_mask(masks, model.patch)
            logits = net.patch_logits(xin, "train")
            full = np.broadcast_to(masks[..., None], targets[ids].shape)
            loss = sparse_categorical_xent(logits, targets[ids], full)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            _step(params, cfg.lr, epoch, b)
            losses.append(value)
        acc = masked_accuracy_on(net, x_val, t_val, val_masks)
        saved = acc > best
        if saved:
            best, best_state, stale = acc, _snapshot(net), 0
            if checkpoint_path is not None:
                checkpoint_save(ModelState(net, stats, cfg.seed, {**meta, "epoch": epoch, "metric": acc}),
                                checkpoint_path)
        else:
            stale += 1
        metrics.append(epoch, float(np.mean(losses)), acc, saved)
        log.info("pretrain epoch %d loss %.4f masked-acc %.4f%s", epoch, np.mean(losses), acc, " *" if saved else "")
        if stale >= cfg.patience:
            break

    net.load_state_dict(best_state)
    best_epoch = max(r["epoch"] for r in metrics.rows if r["saved"])
    return ModelState(net, stats, cfg.seed, {**meta, "epoch": best_epoch, "metric": best}), metrics


def grid_search(x: np.ndarray, model: ModelConfig, cfg: PretrainConfig, lrs: Sequence[float] = GRID_LRS,
                bins: Sequence[int] = GRID_BINS, out_csv: str | Path | None = None) -> dict[tuple[float, int], float]:
    """Best held-out masked accuracy for every (learning rate, bins) cell.

    Every cell shares the data, the mask streams and the initialisation seed.
    """
    table: dict[tuple[float, int], float] = {}
    for lr in lrs:
        for k in bins:
            cell_model = replace(model, scheme=replace(model.scheme, bins=k))
            state, _ = pretrain(x, cell_model, replace(cfg, lr=lr))
            table[(lr, k)] = float(state.meta["metric"])
            log.info("grid lr=%g bins=%d accuracy %.4f", lr, k, table[(lr, k)])
    if out_csv is not None:
        write_grid_csv(table, out_csv)
    return table


def write_grid_csv(table: dict[tuple[float, int], float], path: str | Path) -> None:
    lrs = sorted({lr for lr, _ in table})
    bins = sorted({k for _, k in table})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["learning_rate", *bins])
        for lr in lrs:
            w.writerow([repr(lr), *(f"{table[(lr, k)]:.6f}" for k in bins)])


def read_grid_csv(path: str | Path) -> dict[tuple[float, int], float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    bins = [int(v) for v in rows[0][1:]]
    return {(float(r[0]), k): float(v) for r in rows[1:] for k, v in zip(bins, r[1:])}


# --- fine-tuning -------------------------------------------------------------

def _latents(net: WAMNetwork, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    with no_grad():
        return np.concatenate([net.encode(x[idx], "infer").data for _, idx in _batches(np.arange(len(x)), batch_size)])


def predict_normalized(net: WAMNetwork, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    with no_grad():
        return np.concatenate([net.regress(x[idx], "infer").data for _, idx in _batches(np.arange(len(x)), batch_size)])


def predict(state: ModelState, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Predictions in natural label units."""
    if state.stats is None or state.stats.label_min is None:
        raise ValueError("model state carries no label statistics")
    return state.stats.denormalize_labels(predict_normalized(state.network, np.asarray(x), batch_size).astype(np.float64))


def finetune(pretrained: ModelState, x: np.ndarray, y: np.ndarray, cfg: FinetuneConfig, mode: str = "finetune",
             log_path: str | Path | None = None, checkpoint_path: str | Path | None = None) -> tuple[ModelState, MetricLog]:
    """Train a regression head (``frozen``) or head plus encoder (``finetune``) on a labelled train split.

    Labels are min-max normalised with statistics fitted on ``y``; a seeded
    slice of ``y`` is held out to monitor MAE for checkpointing.
    """
    if mode not in ("frozen", "finetune"):
        raise ValueError(f"mode must be 'frozen' or 'finetune', got {mode!r}")
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need a nonempty labelled set with one label row per sample")
    lo, hi = minmax_fit(y)
    base_stats = pretrained.stats if pretrained.stats is not None else NormalizationStats(
        np.zeros(pretrained.config.channels), np.ones(pretrained.config.channels))
    stats = base_stats.with_labels(lo, hi)
    y_norm = stats.normalize_labels(y).astype(x.dtype if x.dtype == np.float64 else np.float32)

    net = WAMNetwork(pretrained.config, cfg.seed, decoder=False, head=True)
    net.copy_encoder_from(pretrained.network)
    frozen = mode == "frozen"
    net.set_encoder_trainable(not frozen)
    params = net.head_params() if frozen else net.params()

    fit_ids, val_ids = _split(len(x), cfg.val_fraction, np.random.default_rng([cfg.seed, 7]))
    feats = _latents(net, x) if frozen else None
    drop_rng = np.random.default_rng([cfg.seed, 8])
    metrics = MetricLog(log_path)
    best, best_state, stale = np.inf, _snapshot(net), 0
    meta = {"phase": mode, "monitor": "val_mae_normalized", "lr": cfg.lr}

    def val_mae() -> float:
        if frozen:
            with no_grad():
                pred = net.head(Tensor(feats[val_ids]), "infer").data
        else:
            pred = predict_normalized(net, x[val_ids])
        return float(np.mean(np.abs(pred - y_norm[val_ids])))

    for epoch in range(1, cfg.epochs + 1):
        order = fit_ids[np.random.default_rng([cfg.seed, 9, epoch]).permutation(len(fit_ids))]
        losses = []
        for b, ids in _batches(order, cfg.batch_size):
            if frozen:
                out = net.head(Tensor(feats[ids]), "train", drop_rng)
            else:
                out = net.regress(x[ids], "train", drop_rng)
            loss = mean_squared_error(out, y_norm[ids])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            _step(params, cfg.lr, epoch, b)
            losses.append(value)
        mae = val_mae()
        saved = mae < best
        if saved:
            best, best_state, stale = mae, _snapshot(net), 0
            if checkpoint_path is not None:
                checkpoint_save(ModelState(net, stats, cfg.seed, {**meta, "epoch": epoch, "metric": mae}),
                                checkpoint_path)
        else:
            stale += 1
        metrics.append(epoch, float(np.mean(losses)), mae, saved)
        log.info("%s epoch %d loss %.5f val-mae %.5f%s", mode, epoch, np.mean(losses), mae, " *" if saved else "")
        if stale >= cfg.patience:
            break

    net.load_state_dict(best_state)
    net.set_encoder_trainable(True)
    best_epoch = max(r["epoch"] for r in metrics.rows if r["saved"])
    return ModelState(net, stats, cfg.seed, {**meta, "epoch": best_epoch, "metric": best}), metrics


def evaluate_mae(state: ModelState, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-label mean absolute error in natural units."""
    if len(x) == 0:
        raise ValueError("empty evaluation set")
    return mae(predict(state, x), y)


def mae(pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {y.shape}")
    return np.abs(pred - y).mean(axis=0)


def average_baseline(y_train: np.ndarray, n: int) -> np.ndarray:
    """Constant predictor at the training mean of each label."""
    return np.broadcast_to(np.asarray(y_train, dtype=np.float64).mean(axis=0), (n, np.shape(y_train)[1])).copy()

