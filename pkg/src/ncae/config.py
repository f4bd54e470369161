"""Flat run configuration: ``key = value`` file plus ``--key value`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ncae.data import SynthConfig
from ncae.dsp import PreprocessConfig
from ncae.errors import ConfigError
from ncae.training import KERNELS, LEARNING_RATES, TrainConfig


@dataclass
class RunConfig:
    # paths
    corpus_dir: str = "corpus"
    cache_dir: str = "cache"
    out_dir: str = "runs"
    model_path: str = "runs/model.ncae"
    # preprocessing
    sample_rate: int = 44100
    window_len: int = 2048
    hop_len: int = 512
    n_mels: int = 128
    stack_len: int = 30
    segment_len_ms: float = 500.0
    segment_hop_ms: float = 250.0
    apply_dct: bool = False
    log_floor: float = 1e-10
    stack_mode: str = "tumbling"
    # events / split
    event_threshold: float = 0.1
    split_fraction: float = 0.8
    split_seed: int = 0
    # training
    model: str = "ncae"
    learning_rate: float = 1e-3
    kernel: int = 3
    batch_size: int = 16
    max_epochs: int = 1000
    patience: int = 20
    min_delta: float = 1e-5
    seed: int = 0
    # sweep / Monte Carlo
    learning_rates: tuple = LEARNING_RATES
    kernels: tuple = KERNELS
    runs: int = 5
    # detection
    sigma_multiplier: float = 1.5
    realtime: bool = False
    chunk_ms: float = 250.0
    # synthesis
    synth_seed: int = 7
    n_dry: int = 38
    n_wet: int = 27
    min_duration: float = 10.0
    max_duration: float = 20.0
    pad: float = 0.0
    wet_level: float = 0.35

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.sample_rate, self.window_len, self.hop_len, self.n_mels, self.stack_len,
                                self.segment_len_ms, self.segment_hop_ms, self.apply_dct, self.log_floor)

    def train(self, **overrides) -> TrainConfig:
        kw = dict(learning_rate=self.learning_rate, kernel=self.kernel, batch_size=self.batch_size,
                  max_epochs=self.max_epochs, patience=self.patience, min_delta=self.min_delta, seed=self.seed)
        kw.update(overrides)
        return TrainConfig(**kw)

    def synth(self) -> SynthConfig:
        return SynthConfig(seed=self.synth_seed, n_dry=self.n_dry, n_wet=self.n_wet,
                           sample_rate=self.sample_rate, min_duration=self.min_duration,
                           max_duration=self.max_duration, pad=self.pad, wet_level=self.wet_level)

    def validate(self) -> "RunConfig":
        try:
            self.preprocess()
            self.train()
            self.synth()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.stack_mode not in ("tumbling", "sliding"):
            raise ConfigError(f"stack_mode must be tumbling or sliding, got {self.stack_mode!r}")
        if self.model not in ("ncae", "bottleneck"):
            raise ConfigError(f"model must be ncae or bottleneck, got {self.model!r}")
        if any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise ConfigError("kernel must be odd")
        if any(lr < 0 for lr in self.learning_rates) or not self.learning_rates or not self.kernels:
            raise ConfigError("learning_rates and kernels must be non-empty and non-negative")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.event_threshold <= 0 or self.chunk_ms <= 0:
            raise ConfigError("event_threshold and chunk_ms must be positive")
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            cast = type(default[0])
            return tuple(cast(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        norm = key.replace("-", "_")
        if norm not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        out[norm] = _convert(norm, raw)
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = {}
    if path is not None:
        values.update(parse_pairs(read_config_file(path)))
    values.update(parse_pairs(overrides or {}))
    return dataclasses.replace(RunConfig(), **values).validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
