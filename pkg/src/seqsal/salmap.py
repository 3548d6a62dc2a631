"""Dense saliency maps: Gaussian blurring of fixation maps, normalization, export."""

from __future__ import annotations

import io
import math
import os

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ._io import atomic_write_bytes, pgm_bytes
from .fixdata import FixationMap

DEFAULT_FC = 8.0
TRUNCATE = 4.0


class NormalizationError(ValueError):
    pass


def antonio_sigma(shape: tuple[int, int], fc: float = DEFAULT_FC) -> float:
    """Spatial sigma (pixels) of the Gaussian low-pass whose gain is 0.5 at fc cycles/image.

    A Gaussian with spatial sigma s has transfer function
    exp(-2 pi^2 s^2 f^2) at f cycles/pixel; with f = fc / max(H, W) and gain
    one half this gives s = max(H, W) * sqrt(2 ln 2) / (2 pi fc).
    """
    if not fc > 0:
        raise ValueError(f"fc must be positive, got {fc}")
    return max(shape) * math.sqrt(2.0 * math.log(2.0)) / (2.0 * math.pi * fc)


def blur_fixations(fix: FixationMap | np.ndarray, fc: float = DEFAULT_FC,
                   rescale: bool = True) -> np.ndarray:
    """Blur a fixation map into a dense map.

    Convolves with the equivalent spatial Gaussian truncated at 4 sigma,
    with reflective borders. The result is rescaled to a maximum of 1
    unless ``rescale`` is false or the input has no fixations.
    """
    grid = fix.grid if isinstance(fix, FixationMap) else np.asarray(fix)
    sigma = antonio_sigma(grid.shape, fc)
    out = gaussian_filter(grid.astype(np.float64), sigma, mode="reflect", truncate=TRUNCATE)
    np.maximum(out, 0.0, out=out)
    if rescale:
        peak = out.max()
        if peak > 0:
            out /= peak
    return out


def center_prior(shape: tuple[int, int], sigma: float | None = None) -> np.ndarray:
    """Isotropic Gaussian centred on the image, sigma = min(H, W) / 4 by default, summing to 1."""
    h, w = shape
    if sigma is None:
        sigma = min(h, w) / 4.0
    yy, xx = np.mgrid[0:h, 0:w]
    g = np.exp(-(((yy - (h - 1) / 2) ** 2) + ((xx - (w - 1) / 2) ** 2)) / (2 * sigma**2))
    return g / g.sum()


def normalize_sum(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    s = m.sum()
    if s == 0 or not np.isfinite(s):
        raise NormalizationError("normalize_sum: map sums to zero")
    return m / s


def normalize_range(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        raise NormalizationError("normalize_range: map is constant")
    return (m - lo) / (hi - lo)


def zscore(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    sd = m.std()
    if sd == 0:
        raise NormalizationError("zscore: map has zero standard deviation")
    return (m - m.mean()) / sd


# --------------------------------------------------------------------------
# export


def quantize(m, bits: int) -> np.ndarray:
    """round(v * (2**bits - 1)) for v in [0, 1]; values outside are clipped."""
    top = (1 << bits) - 1
    q = np.floor(np.clip(np.asarray(m, np.float64), 0.0, 1.0) * top + 0.5)
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def png16_bytes(m) -> bytes:
    q = quantize(m, 16)
    buf = io.BytesIO()
    Image.fromarray(q.astype("<u2")).save(buf, format="PNG")
    return buf.getvalue()


def write_map(m, path) -> None:
    """Write a [0, 1] map as 16-bit PNG or 8-bit PGM, chosen by extension."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".png":
        data = png16_bytes(m)
    elif ext == ".pgm":
        data = pgm_bytes(quantize(m, 8))
    else:
        raise ValueError(f"unsupported map format {ext!r}; use .png or .pgm")
    atomic_write_bytes(path, data)


def read_map(path) -> np.ndarray:
    """Load a map written by :func:`write_map` (or a .npy array) as float64 in [0, 1]."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".npy":
        return np.load(path).astype(np.float64)
    with Image.open(path) as im:
        arr = np.asarray(im)
    top = 255.0 if arr.dtype == np.uint8 else 65535.0
    return arr.astype(np.float64) / top
