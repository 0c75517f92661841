"""Separable interpolation kernels and image resampling.

Images are ``(H, W, 3)`` float arrays in ``[0, 1]``. Resampling builds one
dense weight matrix per axis, so each output pixel is a normalized weighted
sum of clamped source taps. Downscaling widens the kernel by the scale
factor (antialiasing), the way common image libraries do it.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

KERNELS = ("nearest", "bilinear", "bicubic", "lanczos3")

KEYS_A = -0.5


def keys_cubic(x: np.ndarray | float, a: float = KEYS_A) -> np.ndarray:
    """Keys piecewise-cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    inner = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    outer = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, inner, np.where(x < 2.0, outer, 0.0))


def triangle(x: np.ndarray | float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(x, dtype=np.float64)))


def lanczos3(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 3.0, np.sinc(x) * np.sinc(x / 3.0), 0.0)


_FILTERS = {
    "bilinear": (triangle, 1.0),
    "bicubic": (keys_cubic, 2.0),
    "lanczos3": (lanczos3, 3.0),
}


def check_kernel(kind: str) -> str:
    if kind not in KERNELS:
        raise ValueError(f"unknown resampling kernel {kind!r}; expected one of {KERNELS}")
    return kind


@lru_cache(maxsize=64)
def weight_matrix(in_size: int, out_size: int, kind: str) -> np.ndarray:
    """Return the ``(out_size, in_size)`` matrix mapping a source line to the output.

    Output pixel ``i`` is centred at source coordinate ``(i + 0.5) * in/out``
    (pixel-centre convention). Taps beyond the border are clamped to the edge
    pixel, and every row is normalized to sum to one.
    """
    check_kernel(kind)
    if in_size < 1 or out_size < 1:
        raise ValueError("resampling sizes must be >= 1")
    scale = in_size / out_size
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    if kind == "nearest":
        idx = np.minimum(np.floor((np.arange(out_size) + 0.5) * scale).astype(int), in_size - 1)
        weights[np.arange(out_size), idx] = 1.0
        return weights

    fn, radius = _FILTERS[kind]
    stretch = max(scale, 1.0)
    support = radius * stretch
    for i in range(out_size):
        center = (i + 0.5) * scale
        lo = math.floor(center - support - 0.5)
        hi = math.ceil(center + support + 0.5)
        taps = np.arange(lo, hi + 1)
        w = fn((taps + 0.5 - center) / stretch)
        np.add.at(weights[i], np.clip(taps, 0, in_size - 1), w)
    weights /= weights.sum(axis=1, keepdims=True)
    weights.setflags(write=False)
    return weights


def resample(img: np.ndarray, out_w: int, out_h: int, kernel: str = "bilinear") -> np.ndarray:
    """Resize ``img`` to ``out_w`` x ``out_h`` with a separable kernel.

    Raises:
        ValueError: for a zero-sized request or an unknown kernel.
    """
    check_kernel(kernel)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {img.shape}")
    h, w = img.shape[:2]
    wy = weight_matrix(h, out_h, kernel)
    wx = weight_matrix(w, out_w, kernel)
    c = img.shape[2]
    rows = (wy @ img.reshape(h, w * c)).reshape(out_h, w, c)
    out = (rows.transpose(0, 2, 1) @ wx.T).transpose(0, 2, 1)
    return np.clip(out, 0.0, 1.0)
