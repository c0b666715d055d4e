"""Experiment configuration: one YAML tree covering every stage, plus provenance ids.

A config file holds any subset of the sections below; omitted keys keep
their defaults and unknown keys are rejected with their full key path::

    seed: 0
    data:        {n_devices: 50, days: 26, ...}      # GenConfig
    features:    {n_mels: 20, ...}                   # FeatureConfig
    apc:         {conv_channels: [8, 8, 16, 16, 16], lstm_units: 16, ...}
    classifier:  {lstm_units: 32, scale_c: 2.0}
    pretrain:    {epochs: 60, lr: 0.015, batch_size: 16}
    federation:  {rounds: 20, clients_per_round: 10, ...}
    classifier_train: {epochs: 150, lr: 1.0, batch_size: 16}
    pipeline:    {multiplier: 4, ablation_multipliers: [1, 2, 4, 8]}
    eval:        {recalls: [0.6, 0.7, 0.8, 0.9]}
    output:      {dir: out, plots: true}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple

import yaml

from .data import GenConfig
from .errors import ConfigError, ContractError
from .evaluation import RECALL_LEVELS
from .features import FeatureConfig
from .federation import FederationConfig
from .model import ApcConfig, ClassifierConfig
from .pipeline import MULTIPLIERS, ClassifierTrainConfig, ExperimentPlan, PretrainConfig


@dataclass(frozen=True)
class PipelineSection:
    multiplier: int = 4
    ablation_multipliers: Tuple[int, ...] = MULTIPLIERS

    def __post_init__(self):
        object.__setattr__(self, "ablation_multipliers", tuple(self.ablation_multipliers))
        for m in (self.multiplier, *self.ablation_multipliers):
            if m not in MULTIPLIERS:
                raise ContractError(f"multiplier must be one of {MULTIPLIERS}, got {m}")


@dataclass(frozen=True)
class EvalSection:
    recalls: Tuple[float, ...] = RECALL_LEVELS

    def __post_init__(self):
        object.__setattr__(self, "recalls", tuple(float(r) for r in self.recalls))
        if not self.recalls or any(not 0.0 < r <= 1.0 for r in self.recalls):
            raise ContractError("recall levels must lie in (0, 1]")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    plots: bool = True


# Desk-scale defaults: a few minutes per seed on one laptop core.
DESK_APC = ApcConfig(conv_channels=(8, 8, 16, 16, 16), lstm_units=16)
DESK_CLASSIFIER = ClassifierConfig(lstm_units=32)
DESK_PRETRAIN = PretrainConfig(epochs=60, lr=1.5e-2, batch_size=16)
DESK_FEDERATION = FederationConfig(rounds=20, clients_per_round=10, local_epochs=1, batch_size=16, eta=3e-3)
DESK_CLASSIFIER_TRAIN = ClassifierTrainConfig(epochs=150, lr=1.0, batch_size=16)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: GenConfig = GenConfig()
    features: FeatureConfig = FeatureConfig()
    apc: ApcConfig = DESK_APC
    classifier: ClassifierConfig = DESK_CLASSIFIER
    pretrain: PretrainConfig = DESK_PRETRAIN
    federation: FederationConfig = DESK_FEDERATION
    classifier_train: ClassifierTrainConfig = DESK_CLASSIFIER_TRAIN
    pipeline: PipelineSection = PipelineSection()
    eval: EvalSection = EvalSection()
    output: OutputSection = OutputSection()

    def to_dict(self) -> Dict[str, Any]:
        out = {"seed": self.seed}
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            out[f.name] = _plain(dataclasses.asdict(getattr(self, f.name)))
        out["federation"].pop("seed", None)  # always derived from the global seed
        return out

    def hash(self) -> str:
        """Content hash of everything that can change results (the output section excluded)."""
        body = self.to_dict()
        body.pop("output")
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Replace individual keys, e.g. ``with_overrides(federation={"rounds": 0})``."""
        tree = self.to_dict()
        for name, values in sections.items():
            if name == "seed":
                tree["seed"] = values
            else:
                tree.setdefault(name, {}).update(values)
        return from_dict(tree)

    def plan(self, multiplier: int = None) -> ExperimentPlan:
        fed = dataclasses.replace(self.federation, seed=self.seed)
        return ExperimentPlan(
            features=self.features, apc=self.apc, classifier=self.classifier, pretrain=self.pretrain,
            federation=fed, classifier_train=self.classifier_train,
            multiplier=self.pipeline.multiplier if multiplier is None else multiplier,
            seeds=(self.seed,),
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _coerce(value, default, path):
    """Convert a YAML value to the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        # elements follow the first default element; an empty default means numbers
        proto = default[0] if default else 0.0
        return tuple(_coerce(v, proto, f"{path}[{i}]") for i, v in enumerate(value))
    return value


def _section(cls, base, values, path):
    if values is None:
        return base
    if not isinstance(values, dict):
        raise ConfigError("expected a mapping", path)
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is FederationConfig:
        names.discard("seed")
    for key in values:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}")
    kwargs = {k: _coerce(v, getattr(base, k), f"{path}.{k}") for k, v in values.items()}
    try:
        return dataclasses.replace(base, **kwargs)
    except (ContractError, ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def from_dict(tree) -> ExperimentConfig:
    """Build and validate a config from a parsed YAML tree."""
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError("top level must be a mapping", "<root>")
    base = ExperimentConfig()
    sections = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    for key in tree:
        if key not in sections:
            raise ConfigError("unknown key", key)
    kwargs = {}
    if "seed" in tree:
        kwargs["seed"] = _coerce(tree["seed"], 0, "seed")
    for name in sections:
        if name == "seed" or name not in tree:
            continue
        current = getattr(base, name)
        kwargs[name] = _section(type(current), current, tree[name], name)
    cfg = dataclasses.replace(base, **kwargs)
    try:
        cfg.data.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"data.{exc.key_path}" if exc.key_path else "data") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", str(path)) from None
    return from_dict(tree)


def build_id() -> str:
    """Git-style content id of the installed package sources."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha1()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx") and p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()[:12]
