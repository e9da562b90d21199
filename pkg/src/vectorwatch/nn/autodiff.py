"""Minimal reverse-mode autodiff over numpy arrays.

Define-by-run: each op returns a ``Var`` holding its value, its parents and
a closure that routes the upstream gradient. ``backward`` walks the graph
in reverse topological order. Only the ops the classifier heads need are
provided: matmul, bias add, ReLU, dropout, batch norm, global average
pooling, concatenation and fused softmax + cross-entropy.

Arrays keep whatever float dtype they come in with; training runs float32,
the gradient-check harness float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible."""


class GraphNotRecorded(RuntimeError):
    """backward() was asked for gradients that were never recorded."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return arr


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value: np.ndarray, parents: tuple["Var", ...] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None,
                 name: str = "") -> None:
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of ``root`` into every reachable Var's ``.grad``.

    ``seed`` defaults to 1 for scalar roots; non-scalar roots require an
    explicit seed gradient of the same shape.
    """
    if seed is None:
        if root.value.size != 1:
            raise GraphNotRecorded("non-scalar root needs an explicit seed gradient")
        seed = np.ones_like(root.value)
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = np.asarray(seed, dtype=root.value.dtype).reshape(root.value.shape)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def zero_grads(vars_: Sequence[Var]) -> None:
    for v in vars_:
        v.grad = None


# ---------------------------------------------------------------------------
# Ops


def matmul(x: Var, w: Var) -> Var:
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise ShapeMismatch(f"matmul {x.value.shape} x {w.value.shape}")
    out = Var(_finite(x.value @ w.value, "matmul"), (x, w))

    def back(g: np.ndarray) -> None:
        x.add_grad(g @ w.value.T)
        w.add_grad(x.value.T @ g)

    out.backward_fn = back
    return out


def add_bias(x: Var, b: Var) -> Var:
    if x.value.shape[-1] != b.value.shape[-1] or b.value.ndim != 1:
        raise ShapeMismatch(f"bias {b.value.shape} against {x.value.shape}")
    out = Var(_finite(x.value + b.value, "add_bias"), (x, b))

    def back(g: np.ndarray) -> None:
        x.add_grad(g)
        b.add_grad(g.sum(axis=0))

    out.backward_fn = back
    return out


def relu(x: Var) -> Var:
    mask = x.value > 0
    out = Var(np.where(mask, x.value, 0), (x,), name="relu")

    def back(g: np.ndarray) -> None:
        x.add_grad(g * mask)

    out.backward_fn = back
    return out


def dropout(x: Var, rate: float, training: bool,
            rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> Var:
    """Inverted dropout: eval mode is the identity (the same Var).

    ``mask`` may be supplied explicitly (gradient checks); otherwise it is
    drawn from ``rng``.
    """
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng or explicit mask")
        mask = rng.random(x.value.shape) >= rate
    keep = np.asarray(mask, dtype=x.value.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.value.dtype)
    out = Var(x.value * keep * scale, (x,))

    def back(g: np.ndarray) -> None:
        x.add_grad(g * keep * scale)

    out.backward_fn = back
    return out


def global_average_pool(x: Var) -> Var:
    """(B, H, W, C) -> (B, C): per-channel mean over spatial positions."""
    if x.value.ndim != 4:
        raise ShapeMismatch(f"GAP expects (B, H, W, C), got {x.value.shape}")
    b, h, w, c = x.value.shape
    out = Var(x.value.mean(axis=(1, 2)), (x,))

    def back(g: np.ndarray) -> None:
        x.add_grad(np.broadcast_to(g[:, None, None, :] / (h * w),
                                   x.value.shape).astype(x.value.dtype))

    out.backward_fn = back
    return out


def concat(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ShapeMismatch("concat needs at least one part")
    if len(parts) == 1:
        return parts[0]
    widths = [p.value.shape[-1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=-1), tuple(parts))

    def back(g: np.ndarray) -> None:
        start = 0
        for p, width in zip(parts, widths):
            p.add_grad(g[..., start : start + width])
            start += width

    out.backward_fn = back
    return out


def batch_norm(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray,
               running_var: np.ndarray, momentum: float, epsilon: float,
               training: bool) -> Var:
    """Per-feature batch normalization over axis 0.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place; eval mode is the deterministic
    affine map through the running statistics.
    """
    if x.value.ndim != 2:
        raise ShapeMismatch(f"batch_norm expects (B, D), got {x.value.shape}")
    if training:
        mu = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        running_mean += momentum * (mu - running_mean)
        running_var += momentum * (var - running_var)
    else:
        mu = running_mean.astype(x.value.dtype)
        var = running_var.astype(x.value.dtype)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (x.value - mu) * inv_std
    out = Var(_finite(x_hat * gamma.value + beta.value, "batch_norm"),
              (x, gamma, beta))

    def back(g: np.ndarray) -> None:
        gamma.add_grad((g * x_hat).sum(axis=0))
        beta.add_grad(g.sum(axis=0))
        gx_hat = g * gamma.value
        if training:
            n = x.value.shape[0]
            x.add_grad((inv_std / n) * (
                n * gx_hat
                - gx_hat.sum(axis=0)
                - x_hat * (gx_hat * x_hat).sum(axis=0)
            ).astype(x.value.dtype))
        else:
            x.add_grad(gx_hat * inv_std)

    out.backward_fn = back
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; rows sum to 1."""
    z = np.asarray(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Var, onehot: np.ndarray) -> tuple[Var, np.ndarray]:
    """Fused softmax + categorical cross-entropy, averaged over the batch.

    Returns the scalar loss Var and the probability matrix. The fused
    gradient at the logits is (p - y) / batch.
    """
    y = np.asarray(onehot)
    if logits.value.shape != y.shape:
        raise ShapeMismatch(f"logits {logits.value.shape} vs targets {y.shape}")
    probs = softmax(logits.value)
    batch = probs.shape[0]
    clamped = np.clip(probs, 1e-12, 1.0)
    loss_val = -(y * np.log(clamped)).sum() / batch
    out = Var(np.asarray(loss_val, dtype=logits.value.dtype), (logits,))

    def back(g: np.ndarray) -> None:
        logits.add_grad(((probs - y) / batch * g).astype(logits.value.dtype))

    out.backward_fn = back
    return out, probs


def cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    """Categorical cross-entropy of a probability vector against a one-hot.

    Probabilities are clamped to [1e-12, 1], bounding the loss at
    -log(1e-12).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch(f"probabilities {p.shape} vs one-hot {y.shape}")
    return float(-(y * np.log(np.clip(p, 1e-12, 1.0))).sum())
