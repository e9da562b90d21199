"""Seeded training-set augmentation: zoom in/out and brightness gain up/down.

Every source image yields exactly four variants (one per transformation
kind), a x5 expansion. Factors are drawn uniformly from per-kind ranges
using a stream seeded by (run seed, image id), so results are reproducible
and independent of processing order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .imagecore import ImageTensor, ResizePolicy, Scale, resize


class BadFactor(ValueError):
    """Transformation factor outside its allowed domain."""


class MissingImage(KeyError):
    """A manifest entry could not be loaded."""


class AugmentKind(Enum):
    ZOOM_IN = "zoom_in"
    ZOOM_OUT = "zoom_out"
    GAIN_UP = "gain_up"
    GAIN_DOWN = "gain_down"


@dataclass(frozen=True)
class AugmentationSpec:
    zoom_in: tuple[float, float] = (1.05, 1.50)
    zoom_out: tuple[float, float] = (0.75, 0.90)
    gain_up: tuple[float, float] = (1.05, 1.50)
    gain_down: tuple[float, float] = (0.75, 0.95)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("zoom_in", "zoom_out", "gain_up", "gain_down"):
            low, high = getattr(self, name)
            if not low < high:
                raise ValueError(f"{name} range must have low < high")
        if not self.zoom_in[0] > 1:
            raise ValueError("zoom_in range must stay above 1")
        if not self.zoom_out[1] < 1:
            raise ValueError("zoom_out range must stay below 1")

    def range_for(self, kind: AugmentKind) -> tuple[float, float]:
        return getattr(self, kind.value)


@dataclass(frozen=True)
class Variant:
    kind: AugmentKind
    factor: float
    image: ImageTensor


@dataclass(frozen=True)
class AugmentedSet:
    original: ImageTensor
    variants: tuple[Variant, ...]

    def __post_init__(self) -> None:
        kinds = [v.kind for v in self.variants]
        if kinds != list(AugmentKind):
            raise ValueError("expected exactly one variant per kind, in order")
        for v in self.variants:
            if (v.image.height, v.image.width) != (self.original.height,
                                                   self.original.width):
                raise ValueError("variant dimensions must match the original")

    def images(self) -> list[ImageTensor]:
        return [self.original] + [v.image for v in self.variants]


def zoom(img: ImageTensor, factor: float) -> ImageTensor:
    """Zoom by ``factor``.

    factor > 1: center-crop to 1/factor of each side, resize back.
    factor < 1: shrink to factor of each side, center-pad with the median
    color of the image's 1-pixel border ring.
    """
    if not 0 < factor <= 4:
        raise BadFactor(f"zoom factor {factor} outside (0, 4]")
    if factor == 1.0:
        return img
    h, w = img.height, img.width
    back = ResizePolicy(h, w)
    if factor > 1:
        ch = max(1, round(h / factor))
        cw = max(1, round(w / factor))
        top, left = (h - ch) // 2, (w - cw) // 2
        crop = ImageTensor(img.data[top : top + ch, left : left + cw, :], img.scale)
        return resize(crop, back)
    sh = max(1, round(h * factor))
    sw = max(1, round(w * factor))
    small = resize(img, ResizePolicy(sh, sw))
    fill = _border_median(img)
    canvas = np.empty((h, w, 3), np.float32)
    canvas[:, :] = fill
    top, left = (h - sh) // 2, (w - sw) // 2
    canvas[top : top + sh, left : left + sw, :] = small.data
    return ImageTensor(canvas, img.scale)


def _border_median(img: ImageTensor) -> np.ndarray:
    d = img.data
    if img.height == 1 or img.width == 1:
        ring = d.reshape(-1, 3)
    else:
        ring = np.concatenate([
            d[0, :, :], d[-1, :, :], d[1:-1, 0, :], d[1:-1, -1, :],
        ])
    med = np.median(ring, axis=0)
    if img.scale is Scale.BYTE:
        med = np.round(med)
    return med.astype(np.float32)


def gain(img: ImageTensor, factor: float) -> ImageTensor:
    """Multiplicative brightness/contrast gain with clamping to [0, 255]."""
    if not factor > 0:
        raise BadFactor(f"gain factor {factor} must be positive")
    if img.scale is not Scale.BYTE:
        raise BadFactor("gain operates on Byte-scale images")
    if factor == 1.0:
        return img
    out = np.clip(np.round(img.data * np.float64(factor)), 0, 255)
    return ImageTensor(out.astype(np.float32), Scale.BYTE)


def factor_stream(spec: AugmentationSpec, image_id: str) -> dict[AugmentKind, float]:
    """Draw the four factors for one image from its dedicated substream."""
    digest = hashlib.sha256(image_id.encode()).digest()
    words = np.frombuffer(digest[:16], dtype="<u4")
    seq = np.random.SeedSequence([np.uint64(spec.seed & (2**64 - 1)), *words])
    rng = np.random.default_rng(seq)
    out: dict[AugmentKind, float] = {}
    for kind in AugmentKind:
        low, high = spec.range_for(kind)
        out[kind] = float(rng.uniform(low, high))
    return out


_APPLY: dict[AugmentKind, Callable[[ImageTensor, float], ImageTensor]] = {
    AugmentKind.ZOOM_IN: zoom,
    AugmentKind.ZOOM_OUT: zoom,
    AugmentKind.GAIN_UP: gain,
    AugmentKind.GAIN_DOWN: gain,
}


def augment_image(img: ImageTensor, image_id: str,
                  spec: AugmentationSpec) -> AugmentedSet:
    """Produce the original plus its four seeded variants."""
    factors = factor_stream(spec, image_id)
    variants = tuple(
        Variant(kind, factors[kind], _APPLY[kind](img, factors[kind]))
        for kind in AugmentKind
    )
    return AugmentedSet(original=img, variants=variants)


def expand(manifest: Iterable[str], spec: AugmentationSpec,
           load: Callable[[str], ImageTensor]) -> list[AugmentedSet]:
    """Expand every manifest entry into its 5-image augmented set.

    ``load`` maps an image id to its tensor; failures surface as
    MissingImage. Identical (seed, manifest, image bytes) give bit-identical
    output regardless of ordering or concurrency.
    """
    ids = list(manifest)
    if not ids:
        raise ValueError("manifest is empty")
    sets: list[AugmentedSet] = []
    for image_id in ids:
        try:
            img = load(image_id)
        except (KeyError, FileNotFoundError, OSError) as exc:
            raise MissingImage(f"cannot load image {image_id!r}: {exc}") from exc
        sets.append(augment_image(img, image_id, spec))
    return sets
