"""Per-channel z-scores for inputs and per-label min-max scaling for targets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .variables import CHANNEL_ORDER, LABELS, channel_fingerprint


def zscore_fit(chunks: Iterable[np.ndarray], channel_names: tuple[str, ...] = CHANNEL_ORDER):
    """Global per-channel mean and population std over stacked ``(..., C)`` arrays.

    Two passes over the chunks, so the variance stays exact for channels with
    a large offset (radiation fields in J m-2).
    """
    chunks = [np.asarray(c, dtype=np.float64) for c in chunks]
    if not chunks:
        raise ValueError("zscore_fit needs at least one array")
    c = chunks[0].shape[-1]
    count = sum(ch.size // c for ch in chunks)
    mean = sum(ch.reshape(-1, c).sum(axis=0) for ch in chunks) / count
    sq = sum(((ch.reshape(-1, c) - mean) ** 2).sum(axis=0) for ch in chunks)
    std = np.sqrt(sq / count)
    for i, s in enumerate(std):
        if not s > 0:
            raise ValueError(f"zero variance in channel {channel_names[i] if i < len(channel_names) else i}")
    return mean, std


def zscore_apply(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - mean) / std


def minmax_fit(y: np.ndarray, label_names: tuple[str, ...] = LABELS):
    y = np.asarray(y, dtype=np.float64)
    lo, hi = y.min(axis=0), y.max(axis=0)
    for i in range(lo.size):
        if not hi[i] > lo[i]:
            raise ValueError(f"zero range for label {label_names[i] if i < len(label_names) else i}")
    return lo, hi


def minmax_apply(y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return (np.asarray(y, dtype=np.float64) - lo) / (hi - lo)


def minmax_invert(y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * (hi - lo) + lo


@dataclass
class NormalizationStats:
    channel_mean: np.ndarray
    channel_std: np.ndarray
    label_min: np.ndarray | None = None
    label_max: np.ndarray | None = None
    channel_order: tuple[str, ...] = field(default=CHANNEL_ORDER)

    def __post_init__(self) -> None:
        self.channel_mean = np.asarray(self.channel_mean, dtype=np.float64)
        self.channel_std = np.asarray(self.channel_std, dtype=np.float64)
        if self.channel_mean.shape != (len(self.channel_order),) or self.channel_std.shape != self.channel_mean.shape:
            raise ValueError("channel statistics do not match the channel order")
        if np.any(self.channel_std <= 0):
            raise ValueError("channel std must be positive")
        if self.label_min is not None:
            self.label_min = np.asarray(self.label_min, dtype=np.float64)
            self.label_max = np.asarray(self.label_max, dtype=np.float64)
            if np.any(self.label_max <= self.label_min):
                raise ValueError("label max must exceed label min")

    @property
    def fingerprint(self) -> str:
        return channel_fingerprint(self.channel_order)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return zscore_apply(x, self.channel_mean, self.channel_std)

    def normalize_labels(self, y: np.ndarray) -> np.ndarray:
        self._need_labels()
        return minmax_apply(y, self.label_min, self.label_max)

    def denormalize_labels(self, y: np.ndarray) -> np.ndarray:
        self._need_labels()
        return minmax_invert(y, self.label_min, self.label_max)

    def with_labels(self, lo: np.ndarray, hi: np.ndarray) -> "NormalizationStats":
        return NormalizationStats(self.channel_mean, self.channel_std, lo, hi, self.channel_order)

    def _need_labels(self) -> None:
        if self.label_min is None:
            raise ValueError("label statistics have not been fitted")

    def to_dict(self) -> dict:
        doc = {
            "channel_order": list(self.channel_order),
            "fingerprint": self.fingerprint,
            "channels": {name: {"mean": float(m), "std": float(s)}
                         for name, m, s in zip(self.channel_order, self.channel_mean, self.channel_std)},
        }
        if self.label_min is not None:
            doc["labels"] = {name: {"min": float(lo), "max": float(hi)}
                             for name, lo, hi in zip(LABELS, self.label_min, self.label_max)}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NormalizationStats":
        order = tuple(doc["channel_order"])
        if doc.get("fingerprint") not in (None, channel_fingerprint(order)):
            raise ValueError("normalization stats fingerprint does not match their channel order")
        if order != CHANNEL_ORDER:
            raise ValueError(f"channel order {order} differs from the expected {CHANNEL_ORDER}")
        mean = [doc["channels"][n]["mean"] for n in order]
        std = [doc["channels"][n]["std"] for n in order]
        lo = hi = None
        if "labels" in doc:
            lo = [doc["labels"][n]["min"] for n in LABELS]
            hi = [doc["labels"][n]["max"] for n in LABELS]
        return cls(np.array(mean), np.array(std), None if lo is None else np.array(lo),
                   None if hi is None else np.array(hi), order)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text()))
