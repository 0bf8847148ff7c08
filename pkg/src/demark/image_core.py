"""Image representation and file I/O.

Conventions fixed repo-wide:
  * pixels are float64 in [0, 1], stored channel-interleaved as (H, W, C)
  * 8-bit files map to float via v / 255 on load
  * on save, floats quantize with round-half-away-from-zero: floor(v*255 + 0.5)
  * grayscale files are replicated to 3 channels on load
  * PNG is the canonical (lossless) output format

The training code converts to the network's [-1, 1] range at its own
boundary; everything in this module and the compositing/metric code stays
in [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ImageDecodeError, MissingFileError, UnsupportedImageError

_ALLOWED_CHANNELS = (1, 3, 4)

# PIL modes with more than 8 bits per sample
_HIGH_DEPTH_MODES = {"I", "I;16", "I;16B", "I;16L", "I;16N", "F"}


@dataclass(frozen=True)
class Image:
    """An in-memory raster: float64 (H, W, C) with every value in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 3:
            raise ValueError("image data must be a (H, W, C) array")
        if d.dtype != np.float64:
            raise ValueError(f"image data must be float64, got {d.dtype}")
        h, w, c = d.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dims must be >= 1, got {h}x{w}")
        if c not in _ALLOWED_CHANNELS:
            raise ValueError(f"channels must be one of {_ALLOWED_CHANNELS}, got {c}")
        if d.size and not ((d >= 0.0) & (d <= 1.0)).all():
            # also catches NaN, which fails both comparisons
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> "Image":
        """Drop an alpha channel if present; replicate a single channel."""
        if self.channels == 3:
            return self
        if self.channels == 4:
            return Image(np.ascontiguousarray(self.data[:, :, :3]))
        return Image(np.repeat(self.data, 3, axis=2))


def from_array(arr: np.ndarray) -> Image:
    """Build an Image from any float array, coercing dtype (not range)."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return Image(np.ascontiguousarray(a))


def load_image(path: str | os.PathLike) -> Image:
    """Load an 8-bit PNG/JPEG file as a float image in [0, 1].

    Grayscale becomes 3-channel, palette images resolve to RGB(A); an
    alpha channel is preserved.
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"no such image file: {path}")
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in _HIGH_DEPTH_MODES:
                raise UnsupportedImageError(
                    f"{path}: mode {mode} exceeds 8 bits per sample"
                )
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            elif mode == "LA":
                im = im.convert("RGBA")
            elif mode == "1":
                im = im.convert("L")
            elif mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except UnsupportedImageError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as e:
        if isinstance(e, OSError) and not os.path.isfile(path):
            raise MissingFileError(f"no such image file: {path}") from e
        raise ImageDecodeError(f"cannot decode {path}: {e}") from e
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return Image(np.ascontiguousarray(arr))


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write an Image to disk, 8-bit; format follows the file suffix.

    Quantization is floor(v*255 + 0.5), so a save/load round trip moves
    each channel by at most 1/255.
    """
    q = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    if img.channels == 1:
        pil = PILImage.fromarray(q[:, :, 0], mode="L")
    elif img.channels == 3:
        pil = PILImage.fromarray(q, mode="RGB")
    else:
        pil = PILImage.fromarray(q, mode="RGBA")
    pil.save(path)


def resize(img: Image, h: int, w: int) -> Image:
    """Bilinear resize to (h, w).

    Sampling grid: output index i maps to source position
    i * (S-1) / (D-1) for D > 1, and to 0 when D == 1 (S = source dim,
    D = destination dim), so resizing to the same dims is an exact
    identity. Interpolation uses the lerp form a + t*(b-a), which keeps
    constant images exactly constant and the output inside [0, 1].
    """
    if h < 1 or w < 1:
        raise ValueError(f"target dims must be >= 1, got {h}x{w}")
    src = img.data
    sh, sw = src.shape[:2]
    if (h, w) == (sh, sw):
        return Image(src.copy())

    def positions(dst: int, s: int) -> np.ndarray:
        if dst == 1:
            return np.zeros(1, dtype=np.float64)
        return np.arange(dst, dtype=np.float64) * ((s - 1) / (dst - 1))

    ys = positions(h, sh)
    xs = positions(w, sw)
    y0 = np.minimum(np.floor(ys).astype(np.intp), sh - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    ty = (ys - y0)[:, None, None]
    tx = (xs - x0)[None, :, None]

    p00 = src[y0[:, None], x0[None, :]]
    p01 = src[y0[:, None], x1[None, :]]
    p10 = src[y1[:, None], x0[None, :]]
    p11 = src[y1[:, None], x1[None, :]]
    top = p00 + tx * (p01 - p00)
    bot = p10 + tx * (p11 - p10)
    out = top + ty * (bot - top)
    return Image(np.ascontiguousarray(out))
