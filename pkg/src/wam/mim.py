"""Masked-patch objective: mask a grid of patches and predict binned patch means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError

DEFAULT_RANGE = (-4.0, 4.0)
ALLOWED_BINS = (4, 8, 16, 32, 64)


@dataclass(frozen=True)
class BinningScheme:
    """Equal-width bins over a per-channel value range (z-score units by default)."""

    bins: int = 64
    lo: tuple[float, ...] | float = DEFAULT_RANGE[0]
    hi: tuple[float, ...] | float = DEFAULT_RANGE[1]

    def __post_init__(self) -> None:
        if self.bins < 2:
            raise ConfigurationError(f"need at least two bins, got {self.bins}")
        if np.any(np.asarray(self.hi) <= np.asarray(self.lo)):
            raise ConfigurationError("bin range must have hi > lo for every channel")

    def quantize(self, values: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        scaled = np.floor((np.asarray(values, dtype=np.float64) - lo) / (hi - lo) * self.bins)
        return np.clip(scaled, 0, self.bins - 1).astype(np.int64)

    def to_dict(self) -> dict:
        as_list = lambda v: list(map(float, v)) if isinstance(v, tuple) else float(v)  # noqa: E731
        return {"bins": self.bins, "lo": as_list(self.lo), "hi": as_list(self.hi)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BinningScheme":
        conv = lambda v: tuple(v) if isinstance(v, list) else v  # noqa: E731
        return cls(int(doc["bins"]), conv(doc["lo"]), conv(doc["hi"]))


@dataclass
class PatchTask:
    mask: np.ndarray          # (G, G) bool, True = masked
    targets: np.ndarray       # (G, G, C) int
    masked_input: np.ndarray  # (H, W, C), masked patches zeroed


def _grid(shape: tuple[int, ...], patch: int) -> int:
    h, w = shape[-3], shape[-2]
    if h % patch or w % patch or h != w:
        raise ConfigurationError(f"{h}x{w} input is not a square multiple of the {patch}x{patch} patch size")
    return h // patch


def patch_means(x: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch, per-channel means of ``(..., H, W, C)`` arrays."""
    g = _grid(x.shape, patch)
    lead = x.shape[:-3]
    c = x.shape[-1]
    blocks = np.asarray(x, dtype=np.float64).reshape(*lead, g, patch, g, patch, c)
    return blocks.mean(axis=(-4, -2))


def patch_bin_targets(x: np.ndarray, scheme: BinningScheme, patch: int = 16) -> np.ndarray:
    return scheme.quantize(patch_means(x, patch))


def expand_mask(mask: np.ndarray, patch: int) -> np.ndarray:
    """Upsample a ``(..., G, G)`` patch mask to ``(..., H, W, 1)`` cells."""
    return np.repeat(np.repeat(mask, patch, axis=-2), patch, axis=-1)[..., None]


def draw_mask(grid: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Bernoulli(p) patch mask, redrawn until at least one patch is masked."""
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"mask probability must lie in (0, 1], got {p}")
    while True:
        mask = rng.random((grid, grid)) < p
        if mask.any():
            return mask


def partition_and_mask(x: np.ndarray, p: float, rng: np.random.Generator,
                       scheme: BinningScheme | None = None, patch: int = 16) -> PatchTask:
    scheme = scheme or BinningScheme()
    grid = _grid(x.shape, patch)
    mask = draw_mask(grid, p, rng)
    keep = ~expand_mask(mask, patch)
    masked = np.where(keep, x, 0).astype(x.dtype)
    return PatchTask(mask, patch_bin_targets(x, scheme, patch), masked)


def task_rng(root_seed: int, epoch: int, sample_id: int) -> np.random.Generator:
    """Independent stream per (root seed, epoch, sample); epoch -1 is reserved for evaluation."""
    return np.random.default_rng(np.random.SeedSequence([root_seed, epoch + 1, sample_id]))


def batch_masks(ids: np.ndarray, grid: int, p: float, root_seed: int, epoch: int) -> np.ndarray:
    return np.stack([draw_mask(grid, p, task_rng(root_seed, epoch, int(i))) for i in ids])


def masked_accuracy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked (patch, channel) positions whose argmax equals the target.

    ``mask`` may be per patch (``targets.shape[:-1]``) or per position.
    """
    correct, total = masked_hits(logits, targets, mask)
    if total == 0:
        raise ValueError("no supervised positions")
    return correct / total


def masked_hits(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[int, int]:
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        mask = np.broadcast_to(mask[..., None], targets.shape)
    if logits.shape[:-1] != targets.shape:
        raise ConfigurationError(f"logits {logits.shape} do not match targets {targets.shape}")
    pred = np.argmax(logits, axis=-1)  # first maximum wins ties
    return int(((pred == targets) & mask).sum()), int(mask.sum())
