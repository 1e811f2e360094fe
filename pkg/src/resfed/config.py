"""Experiment configuration: dataclasses plus JSON loading.

A config file is a JSON object with the blocks shown in the README; the
schema below is the source of truth. Unknown keys anywhere are rejected so
typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .aggregation import AggregatorSpec
from .attacks import AttackSpec
from .datasets import BackdoorPattern

__all__ = [
    "DatasetSpec",
    "PartitionSpec",
    "ModelSpec",
    "LocalTraining",
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "config_from_dict",
]


class ConfigError(ValueError):
    """Raised for unusable experiment configs."""


@dataclass(frozen=True)
class DatasetSpec:
    """Where the data comes from. ``source`` is "blobs" or "mnist"."""

    source: str = "blobs"
    classes: int = 10
    dim: int = 64
    per_class: int = 600
    spread: float = 1.0
    test_per_class: int = 100
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self) -> None:
        if self.source not in ("blobs", "mnist"):
            raise ConfigError(f"unknown dataset source {self.source!r}")
        if self.source == "mnist":
            missing = [
                name
                for name in ("images", "labels", "test_images", "test_labels")
                if getattr(self, name) is None
            ]
            if missing:
                raise ConfigError(f"mnist source needs paths: {', '.join(missing)}")
        else:
            if self.classes < 2 or self.dim < 1 or self.per_class < 1:
                raise ConfigError("blobs need classes >= 2, dim >= 1, per_class >= 1")
            if self.test_per_class < 1:
                raise ConfigError("test_per_class must be positive")
            if self.spread < 0:
                raise ConfigError("spread must be non-negative")


@dataclass(frozen=True)
class PartitionSpec:
    """How training data is split across participants."""

    kind: str = "shards"
    classes_per_participant: int = 2
    samples_per_class: int | None = None
    alpha: float = 0.9

    def __post_init__(self) -> None:
        if self.kind not in ("shards", "dirichlet"):
            raise ConfigError(f"unknown partition kind {self.kind!r}")
        if self.kind == "shards" and self.classes_per_participant < 1:
            raise ConfigError("classes_per_participant must be positive")
        if self.kind == "dirichlet" and self.alpha <= 0:
            raise ConfigError("alpha must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Hidden-layer widths; input and output dims come from the dataset."""

    hidden: tuple[int, ...] = (32,)

    def __post_init__(self) -> None:
        hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in hidden):
            raise ConfigError("hidden widths must be positive")
        object.__setattr__(self, "hidden", hidden)


@dataclass(frozen=True)
class LocalTraining:
    """Per-round SGD settings for honest participants."""

    epochs: int = 5
    lr: float = 0.01
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs. ``attackers`` is a count or explicit id list."""

    participants: int
    rounds: int
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: LocalTraining = field(default_factory=LocalTraining)
    attack: AttackSpec = field(default_factory=AttackSpec)
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    attackers: int | tuple[int, ...] = 0
    attacker_epochs: int | None = None
    output: str | None = None

    def __post_init__(self) -> None:
        if self.participants < 1:
            raise ConfigError("need at least 1 participant")
        if self.rounds < 1:
            raise ConfigError("need at least 1 round")
        if isinstance(self.attackers, int):
            if not 0 <= self.attackers < self.participants:
                raise ConfigError("attacker count out of range")
        else:
            ids = tuple(sorted(int(a) for a in self.attackers))
            if len(set(ids)) != len(ids):
                raise ConfigError("attacker ids must be distinct")
            if any(not 0 <= a < self.participants for a in ids):
                raise ConfigError("attacker id out of range")
            if len(ids) >= self.participants:
                raise ConfigError("at least one participant must stay honest")
            object.__setattr__(self, "attackers", ids)
        if self.attacker_epochs is not None and self.attacker_epochs < 0:
            raise ConfigError("attacker_epochs must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


def _build(cls, data: dict, context: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {', '.join(sorted(unknown))}")
    return cls(**data)


def _parse_pattern(data) -> BackdoorPattern | None:
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError("pattern must be an object")
    known = {"indices", "values", "target_label", "image_side", "block", "value"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown pattern keys: {', '.join(sorted(unknown))}")
    if "target_label" not in data:
        raise ConfigError("pattern needs a target_label")
    if "indices" in data:
        indices = np.asarray(data["indices"], dtype=np.int64)
        values = data.get("values", [1.0] * indices.size)
        return BackdoorPattern(indices, np.asarray(values, dtype=np.float64), data["target_label"])
    return BackdoorPattern.pixel_block(
        data["target_label"],
        image_side=data.get("image_side", 28),
        block=data.get("block", 3),
        value=data.get("value", 1.0),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from plain nested dicts (parsed JSON)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(raw)
    top = {
        "participants",
        "rounds",
        "seed",
        "dataset",
        "partition",
        "model",
        "train",
        "attack",
        "aggregator",
        "attackers",
        "attacker_epochs",
        "output",
    }
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("participants", "rounds"):
        if key not in data:
            raise ConfigError(f"config needs {key!r}")

    try:
        dataset = _build(DatasetSpec, data.get("dataset", {}), "dataset")
        partition = _build(PartitionSpec, data.get("partition", {}), "partition")
        model_raw = dict(data.get("model", {}))
        if "hidden" in model_raw:
            model_raw["hidden"] = tuple(model_raw["hidden"])
        model = _build(ModelSpec, model_raw, "model")
        train = _build(LocalTraining, data.get("train", {}), "train")
        attack_raw = dict(data.get("attack", {}))
        if "pattern" in attack_raw:
            attack_raw["pattern"] = _parse_pattern(attack_raw["pattern"])
        attack = _build(AttackSpec, attack_raw, "attack")
        agg_raw = dict(data.get("aggregator", {}))
        if "lambda" in agg_raw:  # accept the symbol users expect to write
            agg_raw["lam"] = agg_raw.pop("lambda")
        aggregator = _build(AggregatorSpec, agg_raw, "aggregator")
        attackers = data.get("attackers", 0)
        if isinstance(attackers, list):
            attackers = tuple(attackers)
        return ExperimentConfig(
            participants=data["participants"],
            rounds=data["rounds"],
            seed=data.get("seed", 0),
            dataset=dataset,
            partition=partition,
            model=model,
            train=train,
            attack=attack,
            aggregator=aggregator,
            attackers=attackers,
            attacker_epochs=data.get("attacker_epochs"),
            output=data.get("output"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    """Parse a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)
