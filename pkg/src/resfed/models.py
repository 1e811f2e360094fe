"""Flat-parameter feedforward classifiers trained with plain minibatch SGD.

Models are softmax classifiers with zero or more ReLU hidden layers, stored
as a single float64 parameter vector so aggregation can treat every model as
one row. Gradients are analytic; training is fully determined by the config
seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelArch",
    "FlatModel",
    "TrainConfig",
    "EvalResult",
    "init_model",
    "to_layers",
    "from_layers",
    "loss_and_grad",
    "predict_logits",
    "predict",
    "sgd_train",
    "evaluate",
    "attack_success_rate",
]


@dataclass(frozen=True)
class ModelArch:
    """Layer dimensions of a softmax classifier.

    ``hidden_dims`` may be empty (plain softmax regression) or hold the
    widths of ReLU hidden layers.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ValueError("layer dimensions must be positive integers")
        if self.output_dim < 2:
            raise ValueError("need at least 2 output classes")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def param_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


@dataclass(frozen=True)
class FlatModel:
    """A model's parameters flattened to one vector, plus its architecture.

    Layout is W then b per layer, in order. Treat instances as immutable:
    every operation here returns a new model rather than updating in place.
    """

    params: np.ndarray
    arch: ModelArch

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1:
            raise ValueError("params must be a flat vector")
        if params.size != self.arch.param_count():
            raise ValueError(
                f"expected {self.arch.param_count()} parameters, got {params.size}"
            )
        object.__setattr__(self, "params", params)


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch SGD settings. The seed fixes shuffling exactly."""

    epochs: int
    lr: float
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    attack_success_rate: float | None = None


def init_model(arch: ModelArch, seed: int) -> FlatModel:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in arch.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return FlatModel(np.concatenate(parts), arch)


def to_layers(model: FlatModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into (weight, bias) views per layer."""
    layers = []
    offset = 0
    for fan_in, fan_out in model.arch.layer_shapes():
        w = model.params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = model.params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def from_layers(arch: ModelArch, layers) -> FlatModel:
    """Inverse of :func:`to_layers`."""
    if len(layers) != len(arch.layer_shapes()):
        raise ValueError("layer count does not match the architecture")
    parts = []
    for (fan_in, fan_out), (w, b) in zip(arch.layer_shapes(), layers):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ValueError("layer shape does not match the architecture")
        parts.append(w.ravel())
        parts.append(b)
    return FlatModel(np.concatenate(parts), arch)


def _forward(model: FlatModel, features: np.ndarray):
    """Return (logits, activations per layer input) for backprop."""
    layers = to_layers(model)
    inputs = [np.asarray(features, dtype=np.float64)]
    a = inputs[0]
    for idx, (w, b) in enumerate(layers):
        z = a @ w + b
        if idx < len(layers) - 1:
            a = np.maximum(z, 0.0)
            inputs.append(a)
        else:
            return z, inputs
    raise AssertionError("model has no layers")


def predict_logits(model: FlatModel, features: np.ndarray) -> np.ndarray:
    logits, _ = _forward(model, features)
    return logits


def predict(model: FlatModel, features: np.ndarray) -> np.ndarray:
    """Predicted class labels (argmax of the logits)."""
    return np.argmax(predict_logits(model, features), axis=1)


def loss_and_grad(
    model: FlatModel, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient as a flat vector."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty (batch, dim) matrix")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must hold one class per row")
    if np.any((labels < 0) | (labels >= model.arch.output_dim)):
        raise ValueError("labels out of range for the model's output layer")

    logits, inputs = _forward(model, features)
    batch = features.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(batch), labels]))

    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    layers = to_layers(model)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        a_in = inputs[idx]
        grads[idx] = (a_in.T @ delta, delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ w.T) * (inputs[idx] > 0.0)
    return loss, np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def sgd_train(
    model: FlatModel,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    batch_transform=None,
) -> FlatModel:
    """Minibatch SGD from a seeded shuffle. Returns a new model.

    ``batch_transform``, when given, maps each (features, labels) minibatch
    to a replacement pair before the gradient step; attacks use it to poison
    the stream without touching the stored data.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels must align")
    if features.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = model.params.copy()
    current = FlatModel(params, model.arch)
    for _ in range(cfg.epochs):
        order = rng.permutation(features.shape[0])
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_x, batch_y = features[idx], labels[idx]
            if batch_transform is not None:
                batch_x, batch_y = batch_transform(batch_x, batch_y)
            _, grad = loss_and_grad(current, batch_x, batch_y)
            params = params - cfg.lr * grad
            current = FlatModel(params, model.arch)
    return current


def evaluate(model: FlatModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows classified correctly."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, features) == labels))


def attack_success_rate(
    model: FlatModel,
    features: np.ndarray,
    labels: np.ndarray,
    pattern,
    target_label: int | None = None,
) -> float:
    """Fraction of non-target rows classified as the target once patched.

    ``pattern`` must provide ``apply(features)`` and ``target_label``; rows
    whose true label already equals the target are excluded. Returns 0.0
    when no rows are eligible.
    """
    target = pattern.target_label if target_label is None else target_label
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    eligible = labels != target
    if not eligible.any():
        return 0.0
    patched = pattern.apply(features[eligible])
    return float(np.mean(predict(model, patched) == target))
