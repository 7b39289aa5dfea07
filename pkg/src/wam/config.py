"""Run configuration: INI sections [data], [model], [pretrain], [finetune].

Values resolve as command-line flag, then config file, then the built-in
desk-scale default.
"""
from __future__ import annotations

import configparser
from io import StringIO
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .models import EncoderConfig, ModelConfig
from .mim import BinningScheme
from .synth import SynthConfig
from .training import FinetuneConfig, PretrainConfig

SECTIONS = ("data", "model", "pretrain", "finetune")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    encoder: str = "residual"
    filters: tuple[int, ...] = (32, 64, 128)
    input_size: int = 32
    patch: int = 8
    bins: int = 64
    hidden: int = 512
    dropout: float = 0.7

    def build(self) -> ModelConfig:
        return ModelConfig(EncoderConfig(self.encoder, self.filters), self.input_size, self.patch,
                           BinningScheme(self.bins), self.hidden, self.dropout)


@dataclass(frozen=True)
class DataSection:
    seed: int = 0
    rows: int = 72
    cols: int = 72
    n_unlabelled: int = 600
    n_labelled: int = 300
    n_event_dates: int = 6
    label_noise: float = 0.1
    corr_len: float = 3.0

    def build(self, window: int) -> SynthConfig:
        return SynthConfig(rows=self.rows, cols=self.cols, window=window, n_unlabelled=self.n_unlabelled,
                           n_labelled=self.n_labelled, n_event_dates=self.n_event_dates,
                           label_noise=self.label_noise, corr_len=self.corr_len)


@dataclass(frozen=True)
class FinetuneSection(FinetuneConfig):
    mode: str = "finetune"

    def build(self) -> FinetuneConfig:
        return FinetuneConfig(**{f.name: getattr(self, f.name) for f in fields(FinetuneConfig)})


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, data=replace(self.data, seed=seed), pretrain=replace(self.pretrain, seed=seed),
                       finetune=replace(self.finetune, seed=seed))

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for name in SECTIONS:
            section = getattr(self, name)
            parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)
                            if not (name != "data" and f.name == "seed")}
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value)


def _parse(raw: str, like: Any, where: str) -> Any:
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(v) for v in raw.split(","))
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(like).__name__}") from None


def _apply(section: Any, values: dict[str, str], where: str) -> Any:
    known = {f.name for f in fields(section)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; expected one of {', '.join(sorted(known))}")
    return replace(section, **{k: _parse(v, getattr(section, k), f"{where}.{k}") for k, v in values.items()})


def load_config(path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Desk defaults, updated by the INI file at ``path``, updated by ``overrides``."""
    cfg = RunConfig()
    layers: list[tuple[str, dict[str, dict[str, str]]]] = []
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        parser.read(path)
        extra = sorted(set(parser.sections()) - set(SECTIONS))
        if extra:
            raise ConfigError(f"{path}: unknown section(s) {', '.join(extra)}; expected {', '.join(SECTIONS)}")
        layers.append((str(path), {s: dict(parser[s]) for s in parser.sections()}))
    if overrides:
        layers.append(("command line", overrides))
    for where, layer in layers:
        for name, values in layer.items():
            cfg = replace(cfg, **{name: _apply(getattr(cfg, name), values, f"{where} [{name}]")})
    if cfg.finetune.mode not in ("frozen", "finetune"):
        raise ConfigError(f"[finetune] mode must be 'frozen' or 'finetune', got {cfg.finetune.mode!r}")
    cfg.model.build()  # surface architecture errors early
    # one root seed, kept in [data], drives generation, initialisation and splits
    return cfg.with_seed(cfg.data.seed)
