"""Experiment configuration files.

A config is a YAML mapping with the sections ``model``, ``task``, ``train``
and ``schedule`` plus the top-level ``seeds`` list and ``output_dir``.
Every key is checked against the schema; an unknown key is an error that
names its dotted path. Example::

    model:
      topology: mlp
      n_layers: 6
    schedule:
      mode: linear
      warmup_steps: 100
    seeds: [0, 1, 2]
    output_dir: runs/demo
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml

from .exceptions import ConfigurationError
from .trainer.loop import TrainConfig

__all__ = [
    "ModelConfig",
    "TaskConfig",
    "TrainSection",
    "ScheduleSection",
    "ExperimentConfig",
    "load_config",
    "dump_config",
]


@dataclass
class ModelConfig:
    topology: str = "mlp"
    dim: int = 16
    hidden_dim: int = 16
    n_layers: int = 6
    base_seed: int = 1000
    base_gain: float = 1.0


@dataclass
class TaskConfig:
    kind: str = "regression"
    teacher_rank: int = 4
    teacher_scale: float = 1.0
    teacher_sites: object = "all"
    n_train: int = 1024
    n_eval: int = 512
    noise_std: float = 0.1
    seq_len: int = 4
    seed: int = 7


@dataclass
class TrainSection:
    method: str = "triadapt"
    optimizer: str = "adamw"
    learning_rate: float = 0.02
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    total_steps: int = 2000
    lr_schedule: str = "linear"
    orth_coefficient: float = 0.01
    orth_enabled: bool = True
    norm_variant: str = "by_rank"
    init_policy: str = "gaussian"
    alpha: float = 16.0
    epsilon: float = 1e-6
    init_std: float = 0.02
    lora_rank: int = 4
    lora_dropout: float = 0.0


@dataclass
class ScheduleSection:
    mode: str = "linear"
    warmup_steps: int = 100
    incre_interval: int = 100
    k_fixed: int = 1
    r_ref: int = 4
    delta_r: int = 1


_SECTIONS = {
    "model": ModelConfig,
    "task": TaskConfig,
    "train": TrainSection,
    "schedule": ScheduleSection,
}
_TOP_LEVEL = set(_SECTIONS) | {"seeds", "output_dir"}


def _coerce(cls, raw, prefix):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{prefix}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigurationError(f"unknown key '{prefix}.{key}'")
    kwargs = {}
    for key, value in raw.items():
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{prefix}.{key}: expected true/false, got {value!r}")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"{prefix}.{key}: expected an integer, got {value!r}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{prefix}.{key}: expected a number, got {value!r}")
            value = float(value)
        elif isinstance(default, str) and key != "teacher_sites":
            if not isinstance(value, str):
                raise ConfigurationError(f"{prefix}.{key}: expected a string, got {value!r}")
        kwargs[key] = value
    return cls(**kwargs)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainSection = field(default_factory=TrainSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a mapping")
        for key in raw:
            if key not in _TOP_LEVEL:
                raise ConfigurationError(f"unknown key '{key}'")
        parts = {name: _coerce(sc, raw.get(name), name) for name, sc in _SECTIONS.items()}
        seeds = raw.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
        ):
            raise ConfigurationError("seeds: expected a non-empty list of non-negative integers")
        output_dir = raw.get("output_dir", "runs/default")
        if not isinstance(output_dir, str):
            raise ConfigurationError("output_dir: expected a string")
        cfg = cls(seeds=list(seeds), output_dir=output_dir, **parts)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "model": asdict(self.model),
            "task": asdict(self.task),
            "train": asdict(self.train),
            "schedule": asdict(self.schedule),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def validate(self):
        if self.model.topology not in ("mlp", "attention_block"):
            raise ConfigurationError(f"model.topology: unknown value {self.model.topology!r}")
        for name in ("dim", "hidden_dim", "n_layers"):
            if getattr(self.model, name) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1")
        if self.task.kind not in ("regression", "classification"):
            raise ConfigurationError(f"task.kind: unknown value {self.task.kind!r}")
        ts = self.task.teacher_sites
        if ts != "all" and not (isinstance(ts, list) and all(isinstance(s, str) for s in ts)):
            raise ConfigurationError("task.teacher_sites: expected 'all' or a list of site ids")
        self.train_config(self.seeds[0])

    def train_config(self, seed) -> TrainConfig:
        return TrainConfig(seed=seed, **asdict(self.train), **asdict(self.schedule))

    def echo(self, seed) -> dict:
        """Config as stored in a run record: one seed, no output location."""
        d = self.to_dict()
        d.pop("output_dir")
        d["seeds"] = [seed]
        return d


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    return ExperimentConfig.from_dict(raw or {})


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
