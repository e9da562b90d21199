"""Shared test helpers: oracles, synthetic data, gradient checking."""

from __future__ import annotations

import numpy as np
import pytest

from vectorwatch.catalog import ManifestEntry, Partition
from vectorwatch.imagecore import ImageTensor, Scale


@pytest.fixture(scope="session", autouse=True)
def warm_denoise_kernel():
    """Compile the windowed kernel once so timed tests measure the algorithm."""
    from vectorwatch.denoise import warmup

    warmup()


def random_byte_image(rng: np.random.Generator, h: int, w: int) -> ImageTensor:
    return ImageTensor(rng.integers(0, 256, (h, w, 3)).astype(np.float32),
                       Scale.BYTE)


def exact_nlm_reference(img: ImageTensor, patch_radius: int = 3,
                        h: float = 10.0) -> np.ndarray:
    """Independent double-loop oracle: for every pixel i, sweep every pixel j,
    with patch distances taken directly from the edge-replicated padding."""
    data = np.round(img.data).astype(np.float64)
    hh, ww = data.shape[:2]
    r = patch_radius
    pad = np.pad(data, ((r, r), (r, r), (0, 0)), mode="edge")
    k = 2 * r + 1
    n = hh * ww
    patches = np.empty((n, k * k * 3))
    for y in range(hh):
        for x in range(ww):
            patches[y * ww + x] = pad[y : y + k, x : x + k, :].ravel()
    flat = data.reshape(n, 3)
    out = np.empty((n, 3))
    for i in range(n):
        d = ((patches - patches[i]) ** 2).sum(axis=1)
        w = np.exp(-d / (h * h))
        w /= w.sum()
        out[i] = w @ flat
    return out.reshape(hh, ww, 3)


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = f()
        arr[idx] = orig - eps
        lo = f()
        arr[idx] = orig
        g[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


BLOB_CLASSES = ("red", "green", "blue")


def hue_blob_dataset(n_images: int, seed: int, side: int = 96,
                     images_per_specimen: int = 3):
    """Synthetic 3-class corpus: each image carries a blob whose dominant
    channel identifies the class; classes are linearly separable in mean
    color, hence through any fixed pointwise feature projection.

    Returns (manifest entries, {image_id: ImageTensor}).
    """
    rng = np.random.default_rng(seed)
    entries: list[ManifestEntry] = []
    images: dict[str, ImageTensor] = {}
    for i in range(n_images):
        specimen = i // images_per_specimen
        cls = specimen % 3  # one class per specimen, balanced across classes
        base = rng.integers(25, 55, (side, side, 3))
        by = int(rng.integers(4, side // 2))
        bx = int(rng.integers(4, side // 2))
        bh = int(rng.integers(side // 3, side // 2))
        bw = int(rng.integers(side // 3, side // 2))
        blob = rng.integers(10, 40, (bh, bw, 3))
        blob[:, :, cls] = rng.integers(170, 230, (bh, bw))
        base[by : by + bh, bx : bx + bw] = blob
        img = ImageTensor(base.astype(np.float32), Scale.BYTE)
        image_id = f"blob-{i:04d}"
        images[image_id] = img
        entries.append(ManifestEntry(
            image_id=image_id,
            specimen_id=f"spec-{specimen:04d}",
            label=BLOB_CLASSES[cls],
            partition=Partition.TRAIN,
        ))
    return entries, images
