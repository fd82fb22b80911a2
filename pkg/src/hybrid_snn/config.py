"""Run configuration read from an INI file.

Example::

    [run]
    dataset = mnist
    data_dir = /data/mnist
    arch = vgg5
    seed = 0
    out = runs/mnist

    [conversion]
    timesteps = 100
    calibration_samples = 512

    [ann]
    lr = 1e-3
    epochs = 6

    [stdb]
    timesteps = 20
    lr = 1e-4
    epochs = 20

Unknown sections and keys are rejected. Weights and thresholds never live in
the config; they are stored in checkpoints.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .network import PRESETS
from .training import TrainConfig


@dataclass(frozen=True)
class ConversionConfig:
    timesteps: int = 100
    calibration_samples: int = 512
    calibration_batch: int = 64
    leak: float = 1.0
    scale: float = 1.0
    floor: float | None = None

    def __post_init__(self):
        if self.timesteps < 1 or self.calibration_samples < 1 or self.calibration_batch < 1:
            raise ConfigError("conversion needs timesteps, calibration_samples and "
                              "calibration_batch >= 1")
        if not 0 < self.leak <= 1:
            raise ConfigError(f"leak must lie in (0, 1], got {self.leak}")
        if not self.scale > 0:
            raise ConfigError(f"threshold scale must be positive, got {self.scale}")


def default_ann() -> TrainConfig:
    return TrainConfig(lr=1e-3, epochs=6, batch_size=64, lr_step=4, lr_gamma=0.2)


def default_stdb() -> TrainConfig:
    return TrainConfig(lr=1e-4, epochs=20, batch_size=32, timesteps=20, leak=0.99,
                       max_train_samples=10000, eval_samples=1000)


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    arch: str = "vgg5"
    seed: int = 0
    out: str = "runs"
    eval_samples: int | None = None
    eval_batch_size: int = 100
    conversion: ConversionConfig = field(default_factory=ConversionConfig)
    ann: TrainConfig = field(default_factory=default_ann)
    stdb: TrainConfig = field(default_factory=default_stdb)

    def __post_init__(self):
        if self.dataset not in ("mnist", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected mnist or cifar10")
        if self.arch not in PRESETS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {sorted(PRESETS)}")
        if self.eval_samples is not None and self.eval_samples < 1:
            raise ConfigError("eval_samples must be positive")
        # one seed drives everything
        object.__setattr__(self, "ann", replace(self.ann, seed=self.seed))
        object.__setattr__(self, "stdb", replace(self.stdb, seed=self.seed))

    def override(self, **kwargs) -> "RunConfig":
        """Apply command-line overrides; ``None`` values are ignored."""
        kw = {k: v for k, v in kwargs.items() if v is not None}
        top = {k: kw.pop(k) for k in list(kw) if k in _field_names(RunConfig)}
        cfg = replace(self, **top)
        if "epochs" in kw:
            epochs = kw.pop("epochs")
            cfg = replace(cfg, ann=replace(cfg.ann, epochs=epochs),
                          stdb=replace(cfg.stdb, epochs=epochs))
        stdb = {k: kw.pop(k) for k in ("truncate", "surrogate", "alpha", "beta") if k in kw}
        if stdb:
            cfg = replace(cfg, stdb=replace(cfg.stdb, **stdb))
        if kw:
            raise ConfigError(f"unknown overrides {sorted(kw)}")
        return cfg

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "data_dir": self.data_dir, "arch": self.arch,
                "seed": self.seed, "out": self.out, "eval_samples": self.eval_samples,
                "conversion": vars(self.conversion).copy(), "ann": self.ann.to_dict(),
                "stdb": self.stdb.to_dict()}


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _coerce(cls, key: str, raw: str, section: str):
    spec = {f.name: f for f in fields(cls)}[key]
    kind = str(spec.type)
    text = raw.strip()
    if "None" in kind and text.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        if kind.startswith("tuple"):
            return tuple(float(v) for v in text.replace(",", " ").split())
        if kind.startswith("bool"):
            return text.lower() in ("1", "true", "yes", "on")
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind}") from None


_SECTIONS = {"conversion": ConversionConfig, "ann": TrainConfig, "stdb": TrainConfig}
_RUN_KEYS = _field_names(RunConfig) - set(_SECTIONS)


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    unknown = set(parser.sections()) - {"run"} - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    top = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown key {key!r} in [run]")
            top[key] = _coerce(RunConfig, key, raw, "run")
    base = RunConfig(seed=top.get("seed", 0))
    for section, cls in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        values = {}
        for key, raw in parser.items(section):
            if key not in _field_names(cls):
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(cls, key, raw, section)
        top[section] = replace(getattr(base, section), **values)
    return RunConfig(**top)
