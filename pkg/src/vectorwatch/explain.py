"""Class-activation heatmaps projected onto the input image.

The spatial importance map for class c is sum_k w_k^c * f_k(i, j) over the
17x17 feature grid. The per-channel weights are the aggregate gradient of
the class logit with respect to the feature map; for a head that is just
GAP followed by a linear layer this reproduces the classifier's weight
column exactly, and the gradient form generalizes it to the multi-layer
heads used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import Backbone, HeadModel
from .imagecore import ImageTensor, Scale, _bilinear, denormalize
from .nn.autodiff import Var, backward


class BadClass(IndexError):
    """Class index outside the model's class range."""


OVERLAY_ALPHA = 0.4


@dataclass(frozen=True)
class CamResult:
    class_index: int
    raw_map: np.ndarray   # 17x17 pre-normalization importance values
    heatmap: np.ndarray   # input-sized, min-max normalized to [0, 1]
    overlay: ImageTensor

    def __post_init__(self) -> None:
        if self.heatmap.min() < 0 or self.heatmap.max() > 1:
            raise ValueError("heatmap must lie in [0, 1]")


def cam_weights(model: HeadModel, features: np.ndarray, class_index: int) -> np.ndarray:
    """Per-channel weights: aggregate d(logit_c)/d(f_k) over spatial positions."""
    if not 0 <= class_index < model.spec.num_classes:
        raise BadClass(f"class index {class_index} out of range")
    f = np.asarray(features, dtype=model.dtype)
    if f.ndim == 3:
        f = f[None]
    x = Var(f)
    logits = model.forward(x, training=False)
    seed = np.zeros_like(logits.value)
    seed[0, class_index] = 1.0
    backward(logits, seed)
    assert x.grad is not None
    return x.grad[0].sum(axis=(0, 1))


def cam(model: HeadModel, backbone: Backbone, img: ImageTensor,
        class_index: int | None = None, alpha: float = OVERLAY_ALPHA) -> CamResult:
    """Compute the activation map for ``class_index`` (default: predicted class)
    and blend it over the image with the fixed blue-to-red colormap."""
    feat = backbone.extract(img, model.spec.endpoint.name)
    if class_index is None:
        class_index = int(np.argmax(model.predict_probs(feat)))
    elif not 0 <= class_index < model.spec.num_classes:
        raise BadClass(f"class index {class_index} out of range")
    w = cam_weights(model, feat, class_index)
    raw = (feat.astype(np.float64) @ w.astype(np.float64)).astype(np.float32)
    heat = np.maximum(raw, 0.0)
    up = _bilinear(heat[:, :, None].astype(np.float32), img.height, img.width)[:, :, 0]
    lo, hi = float(up.min()), float(up.max())
    if hi > lo:
        heatmap = (up - lo) / (hi - lo)
    else:
        heatmap = np.zeros_like(up)
    overlay = _blend(img, heatmap, alpha)
    return CamResult(class_index=class_index, raw_map=raw,
                     heatmap=heatmap.astype(np.float32), overlay=overlay)


def _blend(img: ImageTensor, heatmap: np.ndarray, alpha: float) -> ImageTensor:
    base = denormalize(img).data if img.scale is Scale.UNIT else img.data
    cmap = np.empty_like(base)
    cmap[:, :, 0] = heatmap * 255.0
    cmap[:, :, 1] = 0.0
    cmap[:, :, 2] = (1.0 - heatmap) * 255.0
    out = np.round((1.0 - alpha) * base + alpha * cmap)
    return ImageTensor(out.astype(np.float32), Scale.BYTE)


def raw_map_csv(result: CamResult) -> str:
    """The 17x17 raw map as CSV rows, for inspection alongside the overlay."""
    lines = [",".join(f"{v:.6g}" for v in row) for row in result.raw_map]
    return "\n".join(lines) + "\n"
