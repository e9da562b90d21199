"""Trainable layers built on the autodiff core, plus functional forms.

Hidden dense layers use ReLU; the classifier layer is linear into softmax.
Glorot-uniform initialization throughout.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from .autodiff import ShapeMismatch, Var, add_bias, batch_norm, dropout, matmul, relu

Activation = Literal["relu", "none"]


def glorot_init(in_dim: int, out_dim: int,
                seed: int | np.random.Generator = 0,
                dtype: np.dtype | type = np.float32) -> np.ndarray:
    """Glorot/Xavier uniform: i.i.d. on [-L, L], L = sqrt(6 / (fan_in + fan_out))."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = float(np.sqrt(6.0 / (in_dim + out_dim)))
    return rng.uniform(-limit, limit, size=(in_dim, out_dim)).astype(dtype)


class DenseLayer:
    """y = act(x W + b)."""

    def __init__(self, in_dim: int, out_dim: int, activation: Activation = "relu",
                 rng: np.random.Generator | int = 0,
                 dtype: np.dtype | type = np.float32) -> None:
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation: Activation = activation
        self.weights = Var(glorot_init(in_dim, out_dim, rng, dtype), name="W")
        self.bias = Var(np.zeros(out_dim, dtype=dtype), name="b")

    def __call__(self, x: Var) -> Var:
        y = add_bias(matmul(x, self.weights), self.bias)
        return relu(y) if self.activation == "relu" else y

    def parameters(self) -> dict[str, Var]:
        return {"W": self.weights, "b": self.bias}


class BatchNormLayer:
    """Feature-wise batch normalization with running statistics."""

    def __init__(self, dim: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 dtype: np.dtype | type = np.float32) -> None:
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Var(np.ones(dim, dtype=dtype), name="gamma")
        self.beta = Var(np.zeros(dim, dtype=dtype), name="beta")
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)

    def __call__(self, x: Var, training: bool) -> Var:
        return batch_norm(x, self.gamma, self.beta, self.running_mean,
                          self.running_var, self.momentum, self.epsilon, training)

    def parameters(self) -> dict[str, Var]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class DropoutLayer:
    """Inverted dropout; identity in eval mode."""

    def __init__(self, rate: float) -> None:
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def __call__(self, x: Var, training: bool,
                 rng: np.random.Generator | None = None,
                 mask: np.ndarray | None = None) -> Var:
        return dropout(x, self.rate, training, rng, mask)


# ---------------------------------------------------------------------------
# Functional forms (inference-side spec operations)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Plain-array forward through a dense layer."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"expected (batch, {layer.in_dim}), got {x.shape}")
    y = x @ layer.weights.value + layer.bias.value
    return np.maximum(y, 0) if layer.activation == "relu" else y


def global_average_pool(f: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (1, C) or (B, H, W, C) -> (B, C) spatial mean."""
    f = np.asarray(f)
    if f.ndim == 3:
        return f.mean(axis=(0, 1))[None, :]
    if f.ndim == 4:
        return f.mean(axis=(1, 2))
    raise ShapeMismatch(f"expected 3 or 4 dims, got shape {f.shape}")


def concat_features(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate vectors (or batched vectors) in declared order."""
    if not parts:
        raise ValueError("concat needs at least one part")
    return np.concatenate([np.asarray(p) for p in parts], axis=-1)
