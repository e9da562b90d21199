"""Image representation, PNG/PPM codecs, bilinear resizing and pixel normalization.

Images flow through the pipeline as ``ImageTensor`` values: an H x W x 3
float32 grid tagged with a scale. Byte-scale tensors hold integer values in
[0, 255] (decoded camera pixels); Unit-scale tensors hold reals in [0, 1]
(network input). Denoising produces Byte-range reals; they are re-quantized
at the encode boundary.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(ValueError):
    """Raised for corrupt or unsupported image payloads."""


class AlreadyNormalized(ValueError):
    """Raised when normalize() is applied to a Unit-scale tensor."""


class Scale(Enum):
    BYTE = "byte"   # values in [0, 255]
    UNIT = "unit"   # values in [0, 1]


class ResizeFilter(Enum):
    BILINEAR = "bilinear"


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x 3 RGB pixel grid.

    ``data`` is float32, shape (height, width, 3), row-major. The array is
    treated as immutable once wrapped.
    """

    data: np.ndarray
    scale: Scale = Scale.BYTE

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) data, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        lo, hi = (0.0, 255.0) if self.scale is Scale.BYTE else (0.0, 1.0)
        if arr.min() < lo or arr.max() > hi:
            raise ValueError(
                f"{self.scale.value}-scale values outside [{lo}, {hi}]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    def pixel_bytes(self) -> bytes:
        """Canonical pixel payload: uint8 for Byte scale, float32 LE for Unit."""
        if self.scale is Scale.BYTE:
            return np.round(self.data).astype(np.uint8).tobytes()
        return self.data.astype("<f4").tobytes()

    def content_digest(self) -> str:
        """SHA-256 over dimensions, scale and pixel bytes; used as image id."""
        h = hashlib.sha256()
        h.update(self.scale.value.encode())
        h.update(np.array([self.height, self.width], dtype="<u4").tobytes())
        h.update(self.pixel_bytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ResizePolicy:
    target_h: int = 299
    target_w: int = 299
    filter: ResizeFilter = ResizeFilter.BILINEAR

    def __post_init__(self) -> None:
        if self.target_h < 1 or self.target_w < 1:
            raise ValueError("resize targets must be positive")


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def decode_image(raw: bytes) -> ImageTensor:
    """Decode PNG or binary PPM (P6) bytes into a Byte-scale tensor.

    Alpha channels are dropped and grayscale inputs are replicated to RGB.
    """
    if raw[:2] == b"P6":
        return _decode_ppm(raw)
    if raw[:8] == PNG_MAGIC:
        try:
            with Image.open(io.BytesIO(raw)) as im:
                rgb = im.convert("RGB")
                arr = np.asarray(rgb, dtype=np.uint8)
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise DecodeError(f"cannot decode PNG payload: {exc}") from exc
        return ImageTensor(arr.astype(np.float32), Scale.BYTE)
    raise DecodeError("unsupported image payload (expected PNG or P6 PPM)")


def _decode_ppm(raw: bytes) -> ImageTensor:
    # Header: "P6" <width> <height> <maxval>, tokens separated by whitespace,
    # '#' comments allowed, then a single whitespace byte before the payload.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PPM header")
        try:
            tokens.append(int(raw[start:pos]))
        except ValueError as exc:
            raise DecodeError(f"bad PPM header token {raw[start:pos]!r}") from exc
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise DecodeError("PPM dimensions must be positive")
    if not 1 <= maxval <= 255:
        raise DecodeError(f"unsupported PPM maxval {maxval}")
    payload = raw[pos : pos + width * height * 3]
    if len(payload) != width * height * 3:
        raise DecodeError("truncated PPM payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageTensor(arr.astype(np.float32), Scale.BYTE)


def encode_ppm(img: ImageTensor) -> bytes:
    """Encode as binary PPM (P6). Byte-scale only; values are rounded."""
    if img.scale is not Scale.BYTE:
        raise ValueError("PPM encoding requires a Byte-scale tensor")
    header = f"P6\n{img.width} {img.height}\n255\n".encode()
    return header + img.pixel_bytes()


def encode_png(img: ImageTensor) -> bytes:
    """Encode as PNG (lossless). Byte-scale only; values are rounded."""
    if img.scale is not Scale.BYTE:
        raise ValueError("PNG encoding requires a Byte-scale tensor")
    arr = np.round(img.data).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def encode_image(img: ImageTensor, fmt: str = "ppm") -> bytes:
    fmt = fmt.lower().lstrip(".")
    if fmt == "ppm":
        return encode_ppm(img)
    if fmt == "png":
        return encode_png(img)
    raise ValueError(f"unsupported encode format {fmt!r}")


def resize(img: ImageTensor, policy: ResizePolicy = ResizePolicy()) -> ImageTensor:
    """Resize with half-pixel-centered bilinear interpolation.

    Byte-scale outputs are rounded back to integer values so the Byte
    invariant survives resizing; constant images are preserved exactly.
    """
    th, tw = policy.target_h, policy.target_w
    out = _bilinear(img.data, th, tw)
    if img.scale is Scale.BYTE:
        out = np.round(out)
    return ImageTensor(out.astype(np.float32), img.scale)


def _bilinear(data: np.ndarray, th: int, tw: int) -> np.ndarray:
    h, w = data.shape[:2]
    src = data.astype(np.float32)
    sy = (np.arange(th, dtype=np.float32) + 0.5) * (h / th) - 0.5
    sx = (np.arange(tw, dtype=np.float32) + 0.5) * (w / tw) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (sy - y0).astype(np.float32)[:, None, None]
    tx = (sx - x0).astype(np.float32)[None, :, None]
    # lerp form keeps constant fields bit-exact
    a = src[y0][:, x0]
    b = src[y0][:, x1]
    c = src[y1][:, x0]
    d = src[y1][:, x1]
    top = a + tx * (b - a)
    bot = c + tx * (d - c)
    return top + ty * (bot - top)


def normalize(img: ImageTensor) -> ImageTensor:
    """Byte -> Unit scale: each value divided by 255."""
    if img.scale is Scale.UNIT:
        raise AlreadyNormalized("tensor is already Unit scale")
    return ImageTensor((img.data / np.float32(255.0)).astype(np.float32), Scale.UNIT)


def denormalize(img: ImageTensor) -> ImageTensor:
    """Unit -> Byte scale: values scaled by 255 and rounded to integers."""
    if img.scale is Scale.BYTE:
        raise ValueError("tensor is already Byte scale")
    return ImageTensor(np.round(img.data * 255.0).astype(np.float32), Scale.BYTE)
