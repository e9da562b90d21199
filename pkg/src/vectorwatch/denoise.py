"""Non-local means denoising.

Each output pixel is a similarity-weighted average of other pixels, with
weights ``exp(-d(i,j)/h^2) / Z(i)`` where ``d`` is the squared Euclidean
distance between the RGB patches around i and j. Two search modes:

* ``Windowed(radius)`` — production path; j ranges over the search window
  centered at i, clipped to the image. Runs through a compiled kernel.
* ``Exact()`` — reference path; j ranges over every pixel. Quadratic in
  pixel count, so restricted to images up to 64x64; it exists to check the
  windowed kernel (a window covering the whole image must reproduce it).

Patches are extracted with edge replication, so border pixels have full
patches and denoising commutes with horizontal flips bit-exactly: patch
distances are computed in exact integer arithmetic (inputs are byte
images), and the accumulation adds mirrored window offsets as commutative
IEEE pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit

from .imagecore import ImageTensor, Scale


class ConfigError(ValueError):
    """Invalid denoise parameters."""


class OutOfBounds(IndexError):
    """Pixel coordinate outside the image."""


@dataclass(frozen=True)
class Exact:
    """Search every pixel of the image. Oracle mode, images <= 64x64."""


@dataclass(frozen=True)
class Windowed:
    """Search the (2*radius+1)^2 window centered at the target pixel."""

    radius: int = 10


SearchMode = Union[Exact, Windowed]

EXACT_MAX_SIDE = 64

# Weights below exp(-_LUT_DECADES) are treated as zero. At h=10 that is
# e^-46 ~ 1e-20, twelve orders below the oracle-equivalence tolerance.
_LUT_DECADES = 46.0


@dataclass(frozen=True)
class DenoiseConfig:
    patch_radius: int = 3
    filtering_degree_h: float = 10.0
    search: SearchMode = field(default_factory=Windowed)

    def __post_init__(self) -> None:
        if self.patch_radius < 1:
            raise ConfigError("patch_radius must be >= 1")
        if not self.filtering_degree_h > 0:
            raise ConfigError("filtering degree h must be > 0")
        if isinstance(self.search, Windowed):
            if self.search.radius < self.patch_radius:
                raise ConfigError("search radius must be >= patch_radius")
        elif not isinstance(self.search, Exact):
            raise ConfigError(f"unknown search mode {self.search!r}")


@dataclass(frozen=True)
class PatchDistance:
    """Squared intensity distance between two RGB patches; >= 0."""

    value: float

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("patch distance cannot be negative")


def _require_byte(img: ImageTensor) -> np.ndarray:
    if img.scale is not Scale.BYTE:
        raise ConfigError("denoising operates on Byte-scale images")
    # Byte tensors are integer valued by contract; quantize defensively so
    # patch distances stay exact integers.
    return np.round(img.data).astype(np.int64)


def _padded(img_int: np.ndarray, r: int) -> np.ndarray:
    return np.pad(img_int, ((r, r), (r, r), (0, 0)), mode="edge")


def patch_distance(img: ImageTensor, i: tuple[int, int], j: tuple[int, int],
                   r: int = 3) -> PatchDistance:
    """Sum of squared differences over the (2r+1)^2 x 3 patch intensities.

    ``r`` may be 0 (pointwise comparison); configured denoising uses r >= 1.
    """
    if r < 0:
        raise ConfigError("patch radius must be >= 0")
    data = _require_byte(img)
    h, w = data.shape[:2]
    for y, x in (i, j):
        if not (0 <= y < h and 0 <= x < w):
            raise OutOfBounds(f"pixel ({y}, {x}) outside {h}x{w} image")
    pad = _padded(data, r)
    k = 2 * r + 1
    pi = pad[i[0] : i[0] + k, i[1] : i[1] + k, :]
    pj = pad[j[0] : j[0] + k, j[1] : j[1] + k, :]
    return PatchDistance(float(((pi - pj) ** 2).sum()))


def nlm_weight(d: PatchDistance | float, h: float) -> float:
    """Unnormalized weight exp(-d / h^2); the caller divides by Z(i)."""
    if not h > 0:
        raise ConfigError("filtering degree h must be > 0")
    value = d.value if isinstance(d, PatchDistance) else float(d)
    return float(np.exp(-value / (h * h)))


def denoise(img: ImageTensor, cfg: DenoiseConfig = DenoiseConfig()) -> ImageTensor:
    """Apply non-local means; returns a Byte-range tensor of real values.

    All three channels of a pixel pair share one weight computed from the
    joint RGB patch distance.
    """
    data = _require_byte(img)
    h_img, w_img = data.shape[:2]
    if isinstance(cfg.search, Exact):
        if max(h_img, w_img) > EXACT_MAX_SIDE:
            raise ConfigError(
                f"Exact mode is limited to {EXACT_MAX_SIDE}x{EXACT_MAX_SIDE} images")
        out = _denoise_exact(data, cfg.patch_radius, cfg.filtering_degree_h)
    else:
        out = _denoise_windowed(data, cfg.patch_radius, cfg.search.radius,
                                cfg.filtering_degree_h)
    return ImageTensor(out.astype(np.float32), Scale.BYTE)


def weight_field(img: ImageTensor, cfg: DenoiseConfig,
                 i: tuple[int, int]) -> np.ndarray:
    """Normalized weights w(i, j) for one target pixel, as an H x W grid.

    Pixels outside the search window hold zero. Sums to 1 by construction;
    exposed for the normalization and similarity-ordering properties.
    """
    data = _require_byte(img)
    h_img, w_img = data.shape[:2]
    if not (0 <= i[0] < h_img and 0 <= i[1] < w_img):
        raise OutOfBounds(f"pixel {i} outside {h_img}x{w_img} image")
    r = cfg.patch_radius
    pad = _padded(data, r)
    k = 2 * r + 1
    pi = pad[i[0] : i[0] + k, i[1] : i[1] + k, :].astype(np.float64)
    if isinstance(cfg.search, Windowed):
        rs = cfg.search.radius
        y0, y1 = max(0, i[0] - rs), min(h_img, i[0] + rs + 1)
        x0, x1 = max(0, i[1] - rs), min(w_img, i[1] + rs + 1)
    else:
        y0, y1, x0, x1 = 0, h_img, 0, w_img
    h2 = cfg.filtering_degree_h ** 2
    weights = np.zeros((h_img, w_img), np.float64)
    for y in range(y0, y1):
        for x in range(x0, x1):
            pj = pad[y : y + k, x : x + k, :]
            d = float(((pi - pj) ** 2).sum())
            weights[y, x] = np.exp(-d / h2)
    weights /= weights.sum()
    return weights


def _denoise_exact(data: np.ndarray, r: int, h: float) -> np.ndarray:
    """Direct evaluation of the weighted average over every pixel j."""
    h_img, w_img = data.shape[:2]
    pad = _padded(data, r).astype(np.float64)
    k = 2 * r + 1
    n = h_img * w_img
    patches = np.empty((n, k * k * 3), np.float64)
    for y in range(h_img):
        for x in range(w_img):
            patches[y * w_img + x] = pad[y : y + k, x : x + k, :].ravel()
    flat = data.reshape(n, 3).astype(np.float64)
    h2 = h * h
    out = np.empty((n, 3), np.float64)
    for idx in range(n):
        d = ((patches - patches[idx]) ** 2).sum(axis=1)
        w = np.exp(-d / h2)
        w /= w.sum()
        out[idx] = w @ flat
    return out.reshape(h_img, w_img, 3)


def _denoise_windowed(data: np.ndarray, r: int, radius: int, h: float) -> np.ndarray:
    h_img, w_img = data.shape[:2]
    dmax = int(np.ceil(_LUT_DECADES * h * h))
    lut = np.exp(-np.arange(dmax + 1, dtype=np.float64) / (h * h))
    num = np.zeros((h_img, w_img, 3), np.float64)
    den = np.zeros((h_img, w_img), np.float64)
    _windowed_kernel(data, r, radius, lut, num, den)
    return num / den[:, :, None]


def warmup() -> None:
    """Trigger JIT compilation of the windowed kernel on a tiny image."""
    tiny = np.zeros((4, 4, 3), np.int64)
    lut = np.exp(-np.arange(8, dtype=np.float64))
    _windowed_kernel(tiny, 1, 1, lut,
                     np.zeros((4, 4, 3), np.float64), np.zeros((4, 4), np.float64))


@njit(cache=True, nogil=True)
def _windowed_kernel(img, patch_radius, search_radius, lut, num, den):
    # img: (H, W, 3) int64 byte values. Per window offset, patch distances
    # are box sums of the squared-difference field, via integral images in
    # int64 (exact: max value ~ H*W*3*255^2 < 2^53). Mirrored offsets
    # (dy, +dx) and (dy, -dx) accumulate as a single commutative pair so a
    # horizontal flip of the input flips the output bit-exactly.
    h, w = img.shape[0], img.shape[1]
    r = patch_radius
    ph, pw = h + 2 * r, w + 2 * r
    q = np.empty((ph, pw, 3), np.int64)
    for y in range(ph):
        sy = min(max(y - r, 0), h - 1)
        for x in range(pw):
            sx = min(max(x - r, 0), w - 1)
            for c in range(3):
                q[y, x, c] = img[sy, sx, c]

    k = 2 * r + 1
    lut_n = lut.shape[0]
    wplus = np.zeros((h, w), np.float64)
    wminus = np.zeros((h, w), np.float64)
    e = np.empty((ph, pw), np.int64)
    ii = np.empty((ph + 1, pw + 1), np.int64)

    for dy in range(-search_radius, search_radius + 1):
        if dy <= -h or dy >= h:
            continue
        y0 = max(0, -dy)
        y1 = min(h, h - dy)
        for ad in range(0, search_radius + 1):
            if ad >= w:
                continue
            for sign in range(2):
                if sign == 1 and ad == 0:
                    break
                dx = ad if sign == 0 else -ad
                x0 = max(0, -dx)
                x1 = min(w, w - dx)
                ey0, ey1 = y0, y1 + 2 * r
                ex0, ex1 = x0, x1 + 2 * r
                for y in range(ey0, ey1):
                    for x in range(ex0, ex1):
                        s = np.int64(0)
                        for c in range(3):
                            d = q[y, x, c] - q[y + dy, x + dx, c]
                            s += d * d
                        e[y, x] = s
                for y in range(ey0, ey1 + 1):
                    for x in range(ex0, ex1 + 1):
                        if y == ey0 or x == ex0:
                            ii[y, x] = 0
                        else:
                            ii[y, x] = (e[y - 1, x - 1] + ii[y - 1, x]
                                        + ii[y, x - 1] - ii[y - 1, x - 1])
                wbuf = wplus if sign == 0 else wminus
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        dist = (ii[y + k, x + k] - ii[y, x + k]
                                - ii[y + k, x] + ii[y, x])
                        wbuf[y, x] = lut[dist] if dist < lut_n else 0.0
            for y in range(y0, y1):
                for x in range(w):
                    wp = wplus[y, x] if x < w - ad else 0.0
                    wm = wminus[y, x] if (ad > 0 and x >= ad) else 0.0
                    den[y, x] += wp + wm
                    for c in range(3):
                        vp = wp * img[y + dy, x + ad, c] if wp > 0.0 else 0.0
                        vm = wm * img[y + dy, x - ad, c] if wm > 0.0 else 0.0
                        num[y, x, c] += vp + vm
