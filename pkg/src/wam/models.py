"""Encoders, the patch-category decoder, the regression head and checkpoints."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .core import (
    ConfigurationError,
    Param,
    RunningStats,
    Tensor,
    add,
    avg_pool,
    batch_norm,
    conv2d_same,
    default_dtype,
    dense,
    dropout,
    flatten,
    gelu,
    max_pool2,
    read_container,
    relu,
    reshape,
    write_container,
)
from .geodata.normalize import NormalizationStats
from .geodata.variables import CHANNEL_ORDER, N_CHANNELS, N_LABELS
from .mim import BinningScheme

CHECKPOINT_KIND = "wam-model"


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "residual"
    filters: tuple[int, ...] = (128, 256, 512)
    kernel: int = 3
    pool: int = 2
    skips: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("sequential", "residual"):
            raise ConfigurationError(f"encoder kind must be 'sequential' or 'residual', got {self.kind!r}")
        if len(self.filters) != 3:
            raise ConfigurationError(f"encoder needs exactly three blocks, got filters {self.filters}")
        if any(b <= a for a, b in zip(self.filters, self.filters[1:])):
            raise ConfigurationError(f"block widths must increase, got {self.filters}")
        if self.kernel % 2 == 0 or self.pool != 2:
            raise ConfigurationError("kernel must be odd and pool must be 2")

    @property
    def layers_per_block(self) -> int:
        return 1 if self.kind == "sequential" else 4

    @property
    def activation(self) -> str:
        return "relu" if self.kind == "sequential" else "gelu"

    @property
    def downsample(self) -> int:
        return self.pool ** len(self.filters)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    input_size: int = 128
    patch: int = 16
    scheme: BinningScheme = field(default_factory=BinningScheme)
    hidden: int = 512
    dropout: float = 0.7
    channels: int = N_CHANNELS
    outputs: int = N_LABELS

    def __post_init__(self) -> None:
        if self.input_size % self.encoder.downsample:
            raise ConfigurationError(f"input size {self.input_size} is not divisible by {self.encoder.downsample}")
        if self.input_size % self.patch:
            raise ConfigurationError(f"input size {self.input_size} is not divisible by patch {self.patch}")
        if self.latent_size % self.grid:
            raise ConfigurationError(f"latent extent {self.latent_size} cannot be pooled onto a {self.grid}x{self.grid} grid")

    @property
    def grid(self) -> int:
        return self.input_size // self.patch

    @property
    def latent_size(self) -> int:
        return self.input_size // self.encoder.downsample

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_size, self.latent_size, self.encoder.filters[-1])

    def fingerprint(self) -> str:
        doc = {"encoder": asdict(self.encoder), "scheme": self.scheme.to_dict(), "channels": list(CHANNEL_ORDER),
               "input_size": self.input_size, "patch": self.patch}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"encoder": {**asdict(self.encoder), "filters": list(self.encoder.filters)},
                "input_size": self.input_size, "patch": self.patch, "scheme": self.scheme.to_dict(),
                "hidden": self.hidden, "dropout": self.dropout, "channels": self.channels, "outputs": self.outputs}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        enc = dict(doc["encoder"])
        enc["filters"] = tuple(enc["filters"])
        return cls(EncoderConfig(**enc), doc["input_size"], doc["patch"], BinningScheme.from_dict(doc["scheme"]),
                   doc["hidden"], doc["dropout"], doc["channels"], doc["outputs"])


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 6.0) -> np.ndarray:
    limit = np.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, shape).astype(default_dtype())


def _zeros(n: int) -> np.ndarray:
    return np.zeros(n, dtype=default_dtype())


class ConvUnit:
    """conv3x3-same followed by batch normalisation."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, name: str):
        self.name = name
        self.kernel = Param(_uniform(rng, (k, k, cin, cout), k * k * cin), f"{name}.kernel")
        self.bias = Param(_zeros(cout), f"{name}.bias")
        self.gamma = Param(np.ones(cout, dtype=default_dtype()), f"{name}.gamma")
        self.beta = Param(_zeros(cout), f"{name}.beta")
        self.running = RunningStats(cout)

    def params(self) -> list[Param]:
        return [self.kernel, self.bias, self.gamma, self.beta]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batch_norm(conv2d_same(x, self.kernel, self.bias), self.gamma, self.beta, mode, self.running)


class Encoder:
    def __init__(self, config: EncoderConfig, in_channels: int, rng: np.random.Generator):
        self.config = config
        self.blocks: list[list[ConvUnit]] = []
        cin = in_channels
        for b, width in enumerate(config.filters):
            block = []
            for layer in range(config.layers_per_block):
                block.append(ConvUnit(cin, width, config.kernel, rng, f"encoder.block{b}.layer{layer}"))
                cin = width
            self.blocks.append(block)

    def units(self) -> list[ConvUnit]:
        return [u for block in self.blocks for u in block]

    def params(self) -> list[Param]:
        return [p for u in self.units() for p in u.params()]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if x.shape[1] % self.config.downsample or x.shape[2] % self.config.downsample:
            raise ConfigurationError(f"input extents {x.shape[1:3]} are not divisible by {self.config.downsample}")
        h = x
        for block in self.blocks:
            if self.config.kind == "sequential":
                h = relu(block[0](h, mode))
            else:
                a = gelu(block[0](h, mode))
                for unit in block[1:]:
                    z = unit(a, mode)
                    # in-block skip: the activation sees this layer's output plus the last activation
                    a = gelu(add(z, a) if self.config.skips else z)
                h = a
            h = max_pool2(h)
        return h


class PatchDecoder:
    """Average-pool the latent onto the patch grid, then a position-wise dense to channels x bins."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config.encoder.filters[-1]
        width = config.channels * config.scheme.bins
        self.w = Param(_uniform(rng, (c, width), c, gain=3.0), "decoder.w")
        self.b = Param(_zeros(width), "decoder.b")

    @property
    def width(self) -> int:
        return self.w.shape[1]

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def __call__(self, latent: Tensor) -> Tensor:
        cfg = self.config
        n, h, _, c = latent.shape
        g = cfg.grid
        if h % g:
            raise ConfigurationError(f"latent extent {h} cannot be pooled onto a {g}x{g} grid")
        pooled = avg_pool(latent, h // g)
        flat = reshape(pooled, (n * g * g, c))
        out = dense(flat, self.w, self.b)
        return reshape(out, (n, g, g, cfg.channels, cfg.scheme.bins))


class RegressionHead:
    """flatten -> dropout -> dense(hidden) + GELU -> dense(outputs), linear."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        flat = int(np.prod(config.latent_shape))
        self.w1 = Param(_uniform(rng, (flat, config.hidden), flat), "head.w1")
        self.b1 = Param(_zeros(config.hidden), "head.b1")
        self.w2 = Param(_uniform(rng, (config.hidden, config.outputs), config.hidden, gain=3.0), "head.w2")
        self.b2 = Param(_zeros(config.outputs), "head.b2")

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, latent: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        h = dropout(flatten(latent), self.config.dropout, mode, rng)
        h = gelu(dense(h, self.w1, self.b1))
        return dense(h, self.w2, self.b2)


class WAMNetwork:
    def __init__(self, config: ModelConfig, seed: int = 0, decoder: bool = True, head: bool = True):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config.encoder, config.channels, rng)
        # separate streams so adding a head never changes the decoder init
        self.decoder = PatchDecoder(config, np.random.default_rng([seed, 1])) if decoder else None
        self.head = RegressionHead(config, np.random.default_rng([seed, 2])) if head else None

    def params(self) -> list[Param]:
        out = self.encoder.params()
        if self.decoder is not None:
            out += self.decoder.params()
        if self.head is not None:
            out += self.head.params()
        return out

    def encoder_params(self) -> list[Param]:
        return self.encoder.params()

    def head_params(self) -> list[Param]:
        return [] if self.head is None else self.head.params()

    def set_encoder_trainable(self, trainable: bool) -> None:
        for p in self.encoder.params():
            p.requires_grad = trainable
            p.grad = None

    def encode(self, x, mode: str) -> Tensor:
        return self.encoder(x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype())), mode)

    def patch_logits(self, x, mode: str) -> Tensor:
        if self.decoder is None:
            raise ConfigurationError("this network has no decoder")
        return self.decoder(self.encode(x, mode))

    def regress(self, x, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        if self.head is None:
            raise ConfigurationError("this network has no regression head")
        return self.head(self.encode(x, mode), mode, rng)

    def parameter_count(self, part: str = "encoder") -> int:
        params = {"encoder": self.encoder_params(), "all": self.params()}[part]
        return int(sum(p.data.size for p in params))

    # --- state -------------------------------------------------------------

    def state_dict(self, optimizer: bool = True) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for p in self.params():
            out[f"{p.name}.value"] = p.data
            if optimizer:
                out[f"{p.name}.m"] = p.m
                out[f"{p.name}.v"] = p.v
                out[f"{p.name}.step"] = np.array(p.step_count, dtype=np.int64)
        for u in self.encoder.units():
            out[f"{u.name}.running_mean"] = np.asarray(u.running.mean, dtype=np.float64)
            out[f"{u.name}.running_var"] = np.asarray(u.running.var, dtype=np.float64)
            out[f"{u.name}.running_init"] = np.array(int(u.running.initialized), dtype=np.int64)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for p in self.params():
            key = f"{p.name}.value"
            if key not in state:
                if strict:
                    raise KeyError(f"missing tensor {key}")
                continue
            if state[key].shape != p.data.shape:
                raise FingerprintMismatch(f"{key}: stored shape {state[key].shape} != expected {p.data.shape}")
            p.data = np.array(state[key], copy=True)
            if f"{p.name}.m" in state:
                p.m = np.array(state[f"{p.name}.m"], copy=True)
                p.v = np.array(state[f"{p.name}.v"], copy=True)
                p.step_count = int(state[f"{p.name}.step"])
            else:
                p.m = np.zeros_like(p.data)
                p.v = np.zeros_like(p.data)
                p.step_count = 0
            p.grad = None
        for u in self.encoder.units():
            if f"{u.name}.running_mean" in state:
                u.running.mean = np.array(state[f"{u.name}.running_mean"], copy=True)
                u.running.var = np.array(state[f"{u.name}.running_var"], copy=True)
                u.running.initialized = bool(state[f"{u.name}.running_init"])

    def copy_encoder_from(self, other: "WAMNetwork") -> None:
        if other.config.fingerprint() != self.config.fingerprint():
            raise FingerprintMismatch("encoder architectures differ")
        state = {k: v for k, v in other.state_dict(optimizer=False).items() if k.startswith("encoder.")}
        self.load_state_dict(state, strict=False)


@dataclass
class ModelState:
    network: WAMNetwork
    stats: NormalizationStats | None = None
    seed: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.network.config


def checkpoint_save(state: ModelState, path: str | Path) -> None:
    net = state.network
    arrays = dict(net.state_dict())
    if state.stats is not None:
        arrays["stats.channel_mean"] = state.stats.channel_mean
        arrays["stats.channel_std"] = state.stats.channel_std
        if state.stats.label_min is not None:
            arrays["stats.label_min"] = state.stats.label_min
            arrays["stats.label_max"] = state.stats.label_max
    meta = {
        "kind": CHECKPOINT_KIND,
        "fingerprint": net.config.fingerprint(),
        "config": net.config.to_dict(),
        "channel_order": list(CHANNEL_ORDER),
        "has_decoder": net.decoder is not None,
        "has_head": net.head is not None,
        "seed": state.seed,
        "batch_norm": {"momentum": net.encoder.units()[0].running.momentum, "eps": net.encoder.units()[0].running.eps},
        "meta": state.meta,
    }
    write_container(path, meta, arrays)


def checkpoint_load(path: str | Path, expected: ModelConfig | None = None) -> ModelState:
    meta, arrays = read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise FingerprintMismatch(f"{path}: not a model checkpoint")
    config = ModelConfig.from_dict(meta["config"])
    if config.fingerprint() != meta["fingerprint"]:
        raise FingerprintMismatch(f"{path}: stored fingerprint does not match the stored config")
    if expected is not None and expected.fingerprint() != meta["fingerprint"]:
        raise FingerprintMismatch(
            f"{path}: checkpoint was built for {config.encoder.kind} encoder / {config.scheme.bins} bins "
            f"(fingerprint {meta['fingerprint']}), but the configuration expects {expected.encoder.kind} / "
            f"{expected.scheme.bins} bins (fingerprint {expected.fingerprint()})")
    if tuple(meta["channel_order"]) != CHANNEL_ORDER:
        raise FingerprintMismatch(f"{path}: channel order differs from {CHANNEL_ORDER}")
    with_dtype = arrays[next(k for k in arrays if k.endswith(".value"))].dtype
    from .core import precision

    with precision(with_dtype):
        net = WAMNetwork(config, seed=0, decoder=meta["has_decoder"], head=meta["has_head"])
    net.load_state_dict(arrays)
    stats = None
    if "stats.channel_mean" in arrays:
        stats = NormalizationStats(arrays["stats.channel_mean"], arrays["stats.channel_std"],
                                   arrays.get("stats.label_min"), arrays.get("stats.label_max"))
    return ModelState(net, stats, int(meta["seed"]), meta.get("meta", {}))


def with_encoder(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, encoder=replace(config.encoder, **changes))
