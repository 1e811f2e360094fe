"""Adversarial participant behaviours for the simulation harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import BackdoorPattern, Dataset
from .models import FlatModel

__all__ = [
    "ATTACK_KINDS",
    "AttackSpec",
    "flip_labels",
    "gaussian_noise",
    "poison_batch",
    "batch_poisoner",
    "poison_batches",
    "replacement_scale",
    "mix_models",
]

ATTACK_KINDS = (
    "none",
    "label_flip",
    "gaussian_noise",
    "backdoor_naive",
    "backdoor_replacement",
    "model_mixing",
)


@dataclass(frozen=True)
class AttackSpec:
    """What the attackers do, with per-kind parameters.

    Unused fields are ignored by the other kinds. ``attacker_lr`` and
    ``extra_epochs`` override or extend the honest training settings;
    backdoor kinds fall back to an elevated default learning rate when no
    override is given.
    """

    kind: str = "none"
    src_label: int | None = None
    dst_label: int | None = None
    noise_std: float = 0.0
    pattern: BackdoorPattern | None = None
    target_label: int | None = None
    scale: float = 100.0
    attack_round: int = 6
    extra_epochs: int = 5
    attacker_lr: float | None = None
    poison_per_batch: int = 20
    mix_rate: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind in ("label_flip", "model_mixing"):
            if self.src_label is None or self.dst_label is None:
                raise ValueError(f"{self.kind} needs src_label and dst_label")
            if self.src_label == self.dst_label:
                raise ValueError("src_label and dst_label must differ")
        if self.kind == "gaussian_noise" and self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.kind.startswith("backdoor"):
            if self.pattern is None and self.target_label is None:
                raise ValueError(f"{self.kind} needs a pattern or a target_label")
            if self.poison_per_batch < 1:
                raise ValueError("poison_per_batch must be at least 1")
        if self.kind == "backdoor_replacement" and self.attack_round < 1:
            raise ValueError("attack_round must be at least 1")
        if self.kind == "model_mixing" and not 0 <= self.mix_rate <= 1:
            raise ValueError("mix_rate must lie in [0, 1]")
        if self.extra_epochs < 0:
            raise ValueError("extra_epochs must be non-negative")
        if self.attacker_lr is not None and self.attacker_lr <= 0:
            raise ValueError("attacker_lr must be positive")

    def resolved_pattern(self, image_side: int) -> BackdoorPattern:
        """The configured pattern, or the default block for this geometry."""
        if self.pattern is not None:
            return self.pattern
        if self.target_label is None:
            raise ValueError("no pattern or target_label configured")
        return BackdoorPattern.pixel_block(self.target_label, image_side=image_side)


def flip_labels(ds: Dataset, src_label: int, dst_label: int) -> Dataset:
    """Relabel every ``src_label`` sample as ``dst_label``. Features unchanged."""
    for label in (src_label, dst_label):
        if not 0 <= label < ds.num_classes:
            raise ValueError(f"label {label} out of range")
    if src_label == dst_label:
        raise ValueError("src_label and dst_label must differ")
    labels = np.where(ds.labels == src_label, dst_label, ds.labels)
    return Dataset(ds.features, labels, ds.num_classes)


def gaussian_noise(model: FlatModel, std: float, rng: np.random.Generator) -> FlatModel:
    """Multiply every parameter by an independent N(1, std^2) factor."""
    if std < 0:
        raise ValueError("std must be non-negative")
    factors = rng.normal(1.0, std, size=model.params.size)
    return FlatModel(model.params * factors, model.arch)


def poison_batch(
    features: np.ndarray,
    labels: np.ndarray,
    pattern: BackdoorPattern,
    target_label: int,
    count: int,
):
    """Stamp the pattern onto the first ``count`` rows and retarget them.

    Batches shorter than ``count`` are poisoned whole. Returns copies.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    features = np.asarray(features, dtype=np.float64).copy()
    labels = np.asarray(labels).copy()
    n = min(count, features.shape[0])
    if n:
        features[:n] = pattern.apply(features[:n])
        labels[:n] = target_label
    return features, labels


def batch_poisoner(pattern: BackdoorPattern, target_label: int, count: int):
    """A batch transform for sgd_train that poisons ``count`` rows per batch."""

    def transform(features, labels):
        return poison_batch(features, labels, pattern, target_label, count)

    return transform


def poison_batches(
    ds: Dataset,
    pattern: BackdoorPattern,
    target_label: int,
    poison_per_batch: int,
    batch_size: int,
    seed: int = 0,
):
    """One shuffled pass over the dataset as poisoned minibatches."""
    if poison_per_batch > batch_size:
        raise ValueError("poison_per_batch cannot exceed batch_size")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.random.default_rng(seed).permutation(ds.size)
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        yield poison_batch(
            ds.features[idx], ds.labels[idx], pattern, target_label, poison_per_batch
        )


def replacement_scale(local: FlatModel, global_model: FlatModel, scale: float) -> FlatModel:
    """Amplify the local update so it survives averaging: g + scale*(l - g)."""
    if local.arch != global_model.arch:
        raise ValueError("models must share an architecture")
    params = global_model.params + scale * (local.params - global_model.params)
    return FlatModel(params, local.arch)


def mix_models(
    honest: FlatModel,
    adversarial: FlatModel,
    mix_rate: float,
    rng: np.random.Generator,
) -> FlatModel:
    """Swap each parameter to the adversarial value with probability mix_rate."""
    if honest.arch != adversarial.arch:
        raise ValueError("models must share an architecture")
    if not 0 <= mix_rate <= 1:
        raise ValueError("mix_rate must lie in [0, 1]")
    mask = rng.random(honest.params.size) < mix_rate
    return FlatModel(np.where(mask, adversarial.params, honest.params), honest.arch)
