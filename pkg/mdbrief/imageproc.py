"""Gray images, Gaussian smoothing, bilinear sampling, pyramids and PGM I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import InputParseError

MIN_LEVEL_SIZE = 16
# sample positions are snapped to 1/1024 pixel
SUBPIXEL_STEPS = 1024


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable single-channel 8-bit raster, row-major ``data[y, x]``."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.dtype.kind not in "biuf":
                raise ValueError(f"unsupported pixel dtype {arr.dtype}")
            if arr.dtype.kind == "f" and not np.array_equal(arr, np.round(arr)):
                raise ValueError("intensities must be integers")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
        frozen = np.array(arr, dtype=np.uint8, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "data", frozen)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @cached_property
    def pixels(self) -> np.ndarray:
        """Float64 view of the intensities, shared by all samplers."""
        values = self.data.astype(np.float64)
        values.setflags(write=False)
        return values

    @classmethod
    def constant(cls, width: int, height: int, value: int) -> "GrayImage":
        return cls(np.full((height, width), value, dtype=np.uint8))

    def inverted(self) -> "GrayImage":
        return GrayImage(255 - self.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class Pyramid:
    """Image pyramid; level k is ``floor(size_0 / scale_factor**k)`` on each axis."""

    levels: Tuple[GrayImage, ...]
    scale_factor: float

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, k: int) -> GrayImage:
        return self.levels[k]

    @property
    def base(self) -> GrayImage:
        return self.levels[0]

    def scale(self, octave: int) -> float:
        """Level-0 pixels per level-``octave`` pixel."""
        return self.scale_factor ** octave


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ``ceil(3*sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_smooth(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur with clamp-to-edge borders, rounded to integers."""
    kernel = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img.pixels, kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, layers: Optional[np.ndarray] = None) -> np.ndarray:
    """Bilinear interpolation on a (H, W) raster or a (P, H, W) stack.

    Interpolates as ``a + f * (b - a)`` along each axis, so equal neighbours
    give their value exactly. Coordinates are clipped to the raster; with a
    stack, ``layers`` picks the raster of every sample.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = pixels.shape[-2:]
    x0 = np.clip(np.floor(xs), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    if layers is None:
        def at(y, x):
            return pixels[y, x]
    else:
        layers = np.broadcast_to(np.asarray(layers, dtype=np.intp), xs.shape)

        def at(y, x):
            return pixels[layers, y, x]
    top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0))
    bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0))
    return top + fy * (bottom - top)


def snap_subpixel(coords: np.ndarray) -> np.ndarray:
    """Round coordinates to the nearest multiple of ``1 / SUBPIXEL_STEPS``.

    Positions that differ only by rounding noise land on the same grid point.
    """
    return np.rint(np.asarray(coords, dtype=np.float64) * SUBPIXEL_STEPS) / SUBPIXEL_STEPS


def sample_bilinear_many(img: GrayImage, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples at arrays of in-range coordinates.

    Callers are responsible for clamping.
    """
    return bilinear(img.pixels, xs, ys)


def sample_bilinear(img: GrayImage, x: float, y: float) -> float:
    """Bilinear blend of the four pixels enclosing ``(x, y)``.

    Raises:
        ValueError: if the point lies outside ``[0, width-1] x [0, height-1]``
    """
    if not (0.0 <= x <= img.width - 1 and 0.0 <= y <= img.height - 1):
        raise ValueError(f"sample point ({x}, {y}) outside {img.width}x{img.height} image")
    return float(sample_bilinear_many(img, np.array([x]), np.array([y]))[0])


def resample(img: GrayImage, width: int, height: int, step: float) -> GrayImage:
    """Sample ``img`` on a ``width x height`` grid with spacing ``step``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs = np.minimum(xs * step, img.width - 1)
    ys = np.minimum(ys * step, img.height - 1)
    values = sample_bilinear_many(img, xs, ys)
    return GrayImage(np.clip(np.rint(values), 0, 255).astype(np.uint8))


def build_pyramid(img: GrayImage, n_levels: int, scale_factor: float) -> Pyramid:
    """Build ``n_levels`` levels, each resampled bilinearly from the previous one.

    Raises:
        ValueError: on bad arguments or a level smaller than 16x16
    """
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    if not scale_factor > 1.0:
        raise ValueError(f"scale_factor must be > 1, got {scale_factor}")
    levels = [img]
    for k in range(1, n_levels):
        width = int(math.floor(img.width / scale_factor ** k))
        height = int(math.floor(img.height / scale_factor ** k))
        if width < MIN_LEVEL_SIZE or height < MIN_LEVEL_SIZE:
            raise ValueError(
                f"pyramid level {k} would be {width}x{height}, "
                f"smaller than {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}"
            )
        levels.append(resample(levels[-1], width, height, scale_factor))
    return Pyramid(tuple(levels), float(scale_factor))


# --- PGM (P5) ---------------------------------------------------------------

def _pgm_tokens(buf: bytes, count: int, source: str) -> Tuple[list, int]:
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        if pos >= n:
            raise InputParseError(f"{source}: truncated PGM header")
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(buf[start:pos])
    return tokens, pos


def decode_pgm(buf: bytes, source: str = "<bytes>") -> GrayImage:
    """Decode a binary 8-bit PGM. Values are kept as stored (no maxval rescale)."""
    tokens, pos = _pgm_tokens(buf, 4, source)
    if tokens[0] != b"P5":
        raise InputParseError(f"{source}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputParseError(f"{source}: malformed PGM header") from None
    if width < 1 or height < 1:
        raise InputParseError(f"{source}: invalid PGM size {width}x{height}")
    if not 0 < maxval <= 255:
        raise InputParseError(f"{source}: only 8-bit PGM supported (maxval {maxval})")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise InputParseError(f"{source}: missing separator after PGM header")
    pos += 1
    expected = width * height
    payload = buf[pos:pos + expected]
    if len(payload) != expected:
        raise InputParseError(f"{source}: expected {expected} pixel bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if int(data.max()) > maxval:
        raise InputParseError(f"{source}: pixel value exceeds maxval {maxval}")
    return GrayImage(data)


def encode_pgm(img: GrayImage) -> bytes:
    return b"P5\n%d %d\n255\n" % (img.width, img.height) + img.data.tobytes()


def read_pgm(path: Union[str, Path]) -> GrayImage:
    path = Path(path)
    return decode_pgm(path.read_bytes(), str(path))


def write_pgm(img: GrayImage, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_pgm(img))
