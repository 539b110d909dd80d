"""Dense ReLU classifiers with hand-written backpropagation and plain SGD.

Tensors are float64 numpy arrays. A model is a stack of affine layers
``input_dim -> hidden_width (x hidden_layers) -> output_dim``; the depth
``hidden_layers`` is the heterogeneity axis across clients.

Four objectives are supported, all reduced as a mean over the batch:

* :class:`L1Distill`     -- L1 distance between own logits and fixed target logits
* :class:`TaskCE`        -- softmax cross-entropy against integer labels
* :class:`LwoF`          -- temperature-softened cross-entropy against a frozen snapshot
* :class:`LocalCombined` -- ``TaskCE + beta * LwoF``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from hetfl.errors import DataError, ParameterError, ShapeError

Layer = tuple[np.ndarray, np.ndarray]

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())


@dataclass
class ModelParams:
    """Weights of one classifier; ``layers[i] = (W, b)`` with ``W`` of shape (in, out)."""

    arch: ModelArch
    layers: list[Layer]

    def __post_init__(self):
        dims = self.arch.layer_dims()
        if len(dims) != len(self.layers):
            raise ShapeError(f"arch expects {len(dims)} layers, got {len(self.layers)}")
        for k, ((i, o), (w, b)) in enumerate(zip(dims, self.layers)):
            if w.shape != (i, o) or b.shape != (o,):
                raise ShapeError(
                    f"layer {k}: expected W{(i, o)} b{(o,)}, got W{w.shape} b{b.shape}"
                )

    def copy(self) -> ModelParams:
        return ModelParams(self.arch, [(w.copy(), b.copy()) for w, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def equals(self, other: ModelParams) -> bool:
        return self.arch == other.arch and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")


def init_params(arch: ModelArch, seed: int | np.random.SeedSequence) -> ModelParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_dims():
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(arch, layers)


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(params.arch, [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers])


def _check_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.arch.input_dim:
        got = batch.shape[1] if batch.ndim == 2 else batch.shape
        raise ShapeError(
            f"batch feature extent {got} does not match input_dim {params.arch.input_dim}"
        )
    return batch


def _forward_cache(params: ModelParams, batch: np.ndarray) -> list[np.ndarray]:
    relu = params.arch.activation == "relu"
    acts = [batch]
    h = batch
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if k < last and relu:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward_logits(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Pre-softmax logits of shape (B, output_dim)."""
    batch = _check_batch(params, batch)
    return _forward_cache(params, batch)[-1]


def softmax_temperature(logits: np.ndarray, rho: float = 1.0) -> np.ndarray:
    if not rho > 0:
        raise ParameterError(f"temperature rho must be > 0, got {rho}")
    z = np.asarray(logits, dtype=np.float64) / rho
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray, rho: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / rho
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _check_labels(logits: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DataError(f"labels must lie in [0, {logits.shape[1]}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    return labels


def loss_l1_logits(target: np.ndarray, own: np.ndarray) -> float:
    """Batch mean of the per-example L1 distance between two logit matrices."""
    target, own = np.asarray(target, float), np.asarray(own, float)
    _same_shape(target, own)
    return float(np.abs(target - own).sum(axis=1).mean())


def loss_task_ce(logits: np.ndarray, labels) -> float:
    logits = np.asarray(logits, float)
    labels = _check_labels(logits, labels)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_lwof(current_logits: np.ndarray, snapshot_logits: np.ndarray, rho: float) -> float:
    """Cross-entropy of softened current outputs against softened snapshot outputs."""
    current_logits = np.asarray(current_logits, float)
    snapshot_logits = np.asarray(snapshot_logits, float)
    _same_shape(current_logits, snapshot_logits)
    p = softmax_temperature(snapshot_logits, rho)
    logq = _log_softmax(current_logits, rho)
    return float(-(p * logq).sum(axis=1).mean())


def loss_local_combined(logits, labels, snapshot_logits, rho: float, beta: float) -> float:
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    return loss_task_ce(logits, labels) + beta * loss_lwof(logits, snapshot_logits, rho)


class Objective(Protocol):
    """Loss selector: per-example targets plus value and logit-gradient."""

    def __len__(self) -> int: ...
    def take(self, idx: np.ndarray) -> Objective: ...
    def value(self, logits: np.ndarray) -> float: ...
    def grad_logits(self, logits: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class L1Distill:
    target: np.ndarray

    def __len__(self):
        return len(self.target)

    def take(self, idx):
        return L1Distill(self.target[idx])

    def value(self, logits):
        return loss_l1_logits(self.target, logits)

    def grad_logits(self, logits):
        _same_shape(self.target, logits)
        # np.sign(0) == 0 fixes the subgradient at the kink
        return np.sign(logits - self.target) / logits.shape[0]


@dataclass(frozen=True)
class TaskCE:
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return TaskCE(self.labels[idx])

    def value(self, logits):
        return loss_task_ce(logits, self.labels)

    def grad_logits(self, logits):
        labels = _check_labels(logits, self.labels)
        g = softmax_temperature(logits, 1.0)
        g[np.arange(len(labels)), labels] -= 1.0
        return g / logits.shape[0]


@dataclass(frozen=True)
class LwoF:
    snapshot_logits: np.ndarray
    rho: float = 2.0

    def __len__(self):
        return len(self.snapshot_logits)

    def take(self, idx):
        return LwoF(self.snapshot_logits[idx], self.rho)

    def value(self, logits):
        return loss_lwof(logits, self.snapshot_logits, self.rho)

    def grad_logits(self, logits):
        _same_shape(self.snapshot_logits, logits)
        p = softmax_temperature(self.snapshot_logits, self.rho)
        q = softmax_temperature(logits, self.rho)
        return (q - p) / (self.rho * logits.shape[0])


@dataclass(frozen=True)
class LocalCombined:
    labels: np.ndarray
    snapshot_logits: np.ndarray
    rho: float = 2.0
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if not self.rho > 0:
            raise ParameterError(f"temperature rho must be > 0, got {self.rho}")

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return LocalCombined(self.labels[idx], self.snapshot_logits[idx], self.rho, self.beta)

    def value(self, logits):
        return loss_local_combined(logits, self.labels, self.snapshot_logits, self.rho, self.beta)

    def grad_logits(self, logits):
        task = TaskCE(self.labels).grad_logits(logits)
        return task + self.beta * LwoF(self.snapshot_logits, self.rho).grad_logits(logits)


def backward(params: ModelParams, batch: np.ndarray, objective: Objective) -> ModelParams:
    """Gradient of ``objective`` w.r.t. every weight and bias, shaped like ``params``."""
    batch = _check_batch(params, batch)
    acts = _forward_cache(params, batch)
    delta = objective.grad_logits(acts[-1])
    relu = params.arch.activation == "relu"
    grads: list[Layer] = []
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        grads.append((acts[k].T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = delta @ w.T
            if relu:
                delta = delta * (acts[k] > 0)
    grads.reverse()
    return ModelParams(params.arch, grads)


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    if len(grads.layers) != len(params.layers):
        raise ShapeError(f"{len(grads.layers)} gradient layers for {len(params.layers)} weight layers")
    out = []
    for (w, b), (gw, gb) in zip(params.layers, grads.layers):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError(f"gradient {gw.shape}/{gb.shape} vs weight {w.shape}/{b.shape}")
        out.append((w - learning_rate * gw, b - learning_rate * gb))
    return ModelParams(params.arch, out)


def train(params: ModelParams, inputs: np.ndarray, objective: Objective,
          config: TrainConfig) -> ModelParams:
    """Mini-batch SGD over seeded shuffles; targets inside ``objective`` stay fixed."""
    inputs = _check_batch(params, inputs)
    n = len(inputs)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if len(objective) != n:
        raise ShapeError(f"{n} inputs but {len(objective)} targets")
    rng = np.random.default_rng(config.rng_seed)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = backward(params, inputs[idx], objective.take(idx))
            params = sgd_step(params, grads, config.learning_rate)
    return params
