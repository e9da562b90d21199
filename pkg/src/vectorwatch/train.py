"""Head training: Adam, triangular cyclical learning rate, two phases.

Phase 1 trains the head with the learning rate cycling between 2e-7 and
2e-5; phase 2 would additionally unfreeze the backbone at a fixed 1e-5.
Neither the stand-in nor the imported backbone is trainable, so phase 2
continues head-only and is recorded as "phase2-degraded". Early stopping
monitors validation loss and restores the best checkpoint.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .catalog import checkpoint_write
from .heads import Backbone, HeadModel
from .nn.autodiff import NonFiniteError, Var

log = logging.getLogger(__name__)


class EmptyDataset(ValueError):
    """No training items."""


class DivergedLoss(ArithmeticError):
    """Loss became NaN/Inf during training."""


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.89
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass(frozen=True)
class CLRSchedule:
    base_lr: float = 2e-7
    max_lr: float = 2e-5
    step_size: int | None = None  # None: resolved to 8 epochs of steps at fit time
    waveform: str = "triangular"

    def __post_init__(self) -> None:
        if not 0 < self.base_lr < self.max_lr:
            raise ValueError("need 0 < base_lr < max_lr")
        if self.step_size is not None and self.step_size < 1:
            raise ValueError("step_size must be >= 1")
        if self.waveform != "triangular":
            raise ValueError("only the triangular waveform is supported")


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 50
    min_delta: float = 1e-4

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class PhasePlan:
    phase1_epochs: int = 50
    phase2_epochs: int = 50
    phase1_lr: CLRSchedule = field(default_factory=CLRSchedule)
    phase2_lr: float = 1e-5
    early_stopping: EarlyStopping | None = field(default_factory=EarlyStopping)


#: Epoch counts used in the published training runs; impractical without
#: the original corpus, but selectable.
PAPER_PHASE_PLAN = PhasePlan(phase1_epochs=500, phase2_epochs=1200)


@dataclass(frozen=True)
class TrainConfig:
    adam: AdamConfig = field(default_factory=AdamConfig)
    plan: PhasePlan = field(default_factory=PhasePlan)
    batch_size: int = 32
    dropout_rate: float = 0.3
    seed: int = 0
    loss: str = "categorical_cross_entropy"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss != "categorical_cross_entropy":
            raise ValueError("only categorical cross-entropy is supported")


def clr_at(iteration: int, s: CLRSchedule) -> float:
    """Triangular wave: base at 0, peak at step_size, period 2*step_size.

    Written as a convex blend so the endpoints are hit exactly.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    step = s.step_size
    if step is None:
        raise ValueError("step_size unresolved; supply one or call through fit()")
    cycle = np.floor(1 + iteration / (2 * step))
    x = abs(iteration / step - 2 * cycle + 1)  # 1 at the base, 0 at the peak
    x = min(max(x, 0.0), 1.0)
    return float(s.base_lr * x + s.max_lr * (1.0 - x))


class Adam:
    """Bias-corrected adaptive moment optimizer over named parameters."""

    def __init__(self, cfg: AdamConfig = AdamConfig()) -> None:
        self.cfg = cfg
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Var], lr: float) -> None:
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, var in params.items():
            g = var.grad
            if g is None:
                continue
            m = self._m.setdefault(name, np.zeros_like(var.value))
            v = self._v.setdefault(name, np.zeros_like(var.value))
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            update = (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(var.value.dtype)
            var.value = var.value - update


def adam_step(params: dict[str, Var], grads: dict[str, np.ndarray],
              state: Adam, lr: float, cfg: AdamConfig | None = None) -> Adam:
    """Functional wrapper: assign grads, apply one optimizer step."""
    if cfg is not None and cfg != state.cfg:
        raise ValueError("optimizer state was created with a different config")
    for name, var in params.items():
        if name not in grads:
            raise nn.ShapeMismatch(f"missing gradient for {name!r}")
        if grads[name].shape != var.value.shape:
            raise nn.ShapeMismatch(f"gradient shape mismatch for {name!r}")
        var.grad = grads[name]
    state.step(params, lr)
    return state


cross_entropy = nn.cross_entropy


@dataclass(frozen=True)
class FeatureDataset:
    """Pooled backbone features with integer class labels."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    class_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.train_x) != len(self.train_y) or len(self.val_x) != len(self.val_y):
            raise ValueError("features and labels must align")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    model: HeadModel
    history: list[EpochStats]
    best_epoch: int
    stopped_early: bool


def _onehot(y: np.ndarray, k: int, dtype) -> np.ndarray:
    out = np.zeros((len(y), k), dtype=dtype)
    out[np.arange(len(y)), y] = 1
    return out


def _evaluate(model: HeadModel, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(x) == 0:
        return float("nan"), float("nan")
    logits = model.forward(x, training=False)
    probs = nn.softmax(logits.value)
    onehot = _onehot(y, probs.shape[1], np.float64)
    loss = float(-(onehot * np.log(np.clip(probs, 1e-12, 1.0))).sum() / len(x))
    acc = float((probs.argmax(axis=1) == y).mean())
    return loss, acc


def fit(head: HeadModel, backbone: Backbone, data: FeatureDataset,
        cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train a head on pooled features. See module docstring for the phases.

    The dataset must already be split (specimen-grouped) and augmented on
    the training partition only; ``data`` carries the resulting features.
    """
    if len(data.train_x) == 0:
        raise EmptyDataset("no training items")
    k = head.spec.num_classes
    if data.train_y.max(initial=0) >= k or data.val_y.max(initial=0) >= k:
        raise ValueError("label index outside the head's class range")

    plan = cfg.plan
    steps_per_epoch = int(np.ceil(len(data.train_x) / cfg.batch_size))
    clr = plan.phase1_lr
    if clr.step_size is None:
        clr = CLRSchedule(clr.base_lr, clr.max_lr, 8 * steps_per_epoch)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD0]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD1]))

    params = head.parameters()
    opt = Adam(cfg.adam)
    history: list[EpochStats] = []
    best_loss = np.inf
    best_state: dict[str, np.ndarray] | None = None
    best_epoch = -1
    since_best = 0
    stopped = False
    iteration = 0
    total_epochs = plan.phase1_epochs + plan.phase2_epochs
    phase2_label = "phase2" if backbone.trainable else "phase2-degraded"
    degraded_logged = False

    for epoch in range(total_epochs):
        in_phase1 = epoch < plan.phase1_epochs
        if not in_phase1 and not backbone.trainable and not degraded_logged:
            log.warning("backbone is not trainable; continuing head-only (%s)",
                        phase2_label)
            degraded_logged = True
        order = rng.permutation(len(data.train_x))
        batch_losses: list[float] = []
        correct = 0
        lr = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            lr = clr_at(iteration, clr) if in_phase1 else plan.phase2_lr
            xb = data.train_x[idx]
            yb = _onehot(data.train_y[idx], k, head.dtype)
            try:
                logits = head.forward(xb, training=True, rng=drop_rng)
                loss, probs = nn.softmax_cross_entropy(logits, yb)
            except NonFiniteError as exc:
                raise DivergedLoss(str(exc)) from exc
            if not np.isfinite(loss.value):
                raise DivergedLoss(f"loss diverged at epoch {epoch}")
            nn.zero_grads(list(params.values()))
            nn.backward(loss)
            opt.step(params, lr)
            batch_losses.append(float(loss.value))
            correct += int((probs.argmax(axis=1) == data.train_y[idx]).sum())
            iteration += 1
        val_loss, val_acc = _evaluate(head, data.val_x, data.val_y)
        stats = EpochStats(
            epoch=epoch,
            phase="phase1" if in_phase1 else phase2_label,
            lr=lr,
            train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss,
            train_acc=correct / len(order),
            val_acc=val_acc,
        )
        history.append(stats)

        if plan.early_stopping is not None and np.isfinite(val_loss):
            if val_loss < best_loss - plan.early_stopping.min_delta:
                best_loss = val_loss
                best_state = head.state_dict()
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= plan.early_stopping.patience:
                    stopped = True
                    break

    if best_state is not None:
        head.load_state_dict(best_state)
    if best_epoch < 0:
        best_epoch = len(history) - 1
    return TrainResult(model=head, history=history, best_epoch=best_epoch,
                       stopped_early=stopped)


# ---------------------------------------------------------------------------
# Run directory


def write_run_dir(run_dir: str | os.PathLike, cfg: TrainConfig,
                  result: TrainResult, head_name: str) -> None:
    """Persist config snapshot, per-epoch history CSV and the checkpoint."""
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, default=str))
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "lr", "train_loss", "val_loss",
                         "train_acc", "val_acc"])
        for s in result.history:
            writer.writerow([s.epoch, s.phase, f"{s.lr:.10g}",
                             f"{s.train_loss:.8f}", f"{s.val_loss:.8f}",
                             f"{s.train_acc:.6f}", f"{s.val_acc:.6f}"])
    meta = {"head_name": head_name, "epoch": result.best_epoch, "seed": cfg.seed}
    checkpoint_write(out / "model.fmap", result.model.state_dict(), meta)
