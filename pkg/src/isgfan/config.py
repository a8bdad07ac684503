"""Declarative experiment configuration stored as INI text.

Every default equals the reference training setting where one exists, so an empty
file reproduces the reference configuration. ``dumps`` writes every field
in a fixed order, which makes the echoed file a complete, replayable record.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .network import VARIANTS
from .signal_ingest import NOISE_TYPES

OUTPUT_ROOT_ENV = "ISGFAN_OUTPUT_ROOT"


@dataclass
class TaskSection:
    dataset: str = "archive"  # "archive" or "synthetic"
    data_dir: str = ""
    source: str = ""
    target: str = ""
    # synthetic-only knobs
    num_classes: int = 4
    samples_per_class: int = 50
    length: int = 256
    freq_shift: float = 1.06
    class_ratio: float = 1.35
    amp_shift: float = 1.4
    data_seed: int = 0


@dataclass
class NoiseSection:
    type: str = "mixed"
    snr_db: list[float] = field(default_factory=lambda: [-8.0])
    seed: int = 0


@dataclass
class ModelSection:
    variant: str = "full"
    width: int = 40
    blocks_per_stage: int = 1
    init_std: float = 0.02


@dataclass
class TrainingSection:
    epochs: int = 3500
    batch_size: int = 32
    base_lr: float = 1e-4
    min_lr: float = 1e-6
    weight_decay: float = 5e-4
    seed: int = 0
    eval_every: int = 10
    # per-group learning-rate multipliers, e.g. "GDC:2.0, SDC:2.0"
    lr_scale: str = ""


@dataclass
class PseudoLabelSection:
    xi: float = 0.90
    kappa: float = 0.50


@dataclass
class AttentionSection:
    alpha: float = 0.05
    tau: float = 0.02
    momentum: float = 0.3
    beta: float = -0.1


@dataclass
class BalancerSection:
    delta: float = 0.5
    zeta: float = 0.1
    gamma: float = 0.01
    mu: float = 0.01
    omega: float = 0.01
    rho: float = 10.0


@dataclass
class OutputSection:
    dir: str = ""
    repeats: int = 1
    write_embeddings: bool = True


@dataclass
class ExperimentConfig:
    task: TaskSection = field(default_factory=TaskSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    pseudo_labels: PseudoLabelSection = field(default_factory=PseudoLabelSection)
    attention: AttentionSection = field(default_factory=AttentionSection)
    balancer: BalancerSection = field(default_factory=BalancerSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        if self.task.dataset not in ("archive", "synthetic"):
            raise ValueError(f"task.dataset must be 'archive' or 'synthetic', got {self.task.dataset!r}")
        if self.task.dataset == "archive" and not (self.task.source and self.task.target):
            raise ValueError("task.source and task.target are required for archive datasets")
        if self.task.source and self.task.source == self.task.target:
            raise ValueError("task.source and task.target must differ")
        if self.noise.type not in NOISE_TYPES:
            raise ValueError(f"noise.type must be one of {NOISE_TYPES}")
        if not self.noise.snr_db:
            raise ValueError("noise.snr_db needs at least one value")
        if self.model.variant not in VARIANTS:
            raise ValueError(f"model.variant must be one of {VARIANTS}, got {self.model.variant!r}")
        t = self.training
        if t.epochs < 0:
            raise ValueError("training.epochs must be >= 0")
        if t.batch_size < 2:
            raise ValueError("training.batch_size must be >= 2")
        if t.min_lr > t.base_lr:
            raise ValueError("training.min_lr must not exceed training.base_lr")
        if t.eval_every < 1:
            raise ValueError("training.eval_every must be >= 1")
        if self.model.width < 1 or self.model.init_std <= 0:
            raise ValueError("model.width must be >= 1 and model.init_std > 0")
        if self.output.repeats < 1:
            raise ValueError("output.repeats must be >= 1")
        parse_lr_scale(t.lr_scale)
        return self

    @property
    def task_name(self) -> str:
        if self.task.dataset == "synthetic":
            return f"{self.task.source or 'A'}-{self.task.target or 'B'}"
        return f"{self.task.source}-{self.task.target}"

    def output_root(self) -> Path:
        return Path(self.output.dir or os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def parse_lr_scale(text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, value = item.partition(":")
        if not value:
            raise ValueError(f"bad lr_scale entry {item!r}; expected GROUP:FACTOR")
        out[name.strip()] = float(value)
    return out


def _format(value) -> str:
    if isinstance(value, list):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, kind):
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind == list[float]:
        return [float(v) for v in text.split(",") if v.strip()]
    return text.strip()


def _section_types(section_cls) -> dict:
    hints = {"int": int, "float": float, "bool": bool, "str": str, "list[float]": list[float]}
    return {f.name: hints[f.type] for f in dataclasses.fields(section_cls)}


def from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {f.name for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in known:
            raise ValueError(f"unknown config section [{name}]")
        section = getattr(cfg, name)
        types = _section_types(type(section))
        for key, raw in parser.items(name):
            if key not in types:
                raise ValueError(f"unknown key {key!r} in section [{name}]")
            setattr(section, key, _parse(raw, types[key]))
    return cfg


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    return from_parser(parser)


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return loads(path.read_text())


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in dataclasses.fields(cfg):
        lines.append(f"[{sec.name}]")
        section = getattr(cfg, sec.name)
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def replace(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Copy of ``cfg`` with per-section overrides, e.g.
    ``replace(cfg, training={"epochs": 5})``."""
    new = loads(dumps(cfg))
    for name, values in sections.items():
        section = getattr(new, name)
        for key, value in values.items():
            if not hasattr(section, key):
                raise ValueError(f"unknown key {key!r} in section [{name}]")
            setattr(section, key, value)
    return new
