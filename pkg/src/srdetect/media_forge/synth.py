"""Procedural "native resolution" source clips for desk-scale experiments.

Frames are built from a power-law (1/f) textured background, a few
hard-edged foreground shapes and per-frame sensor noise, panned across a
larger canvas by an integer velocity. Integer panning keeps every frame at
the canvas' native sampling, so no resampling trace exists in the sources.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .frames import write_frames


def power_law_field(rng: np.random.Generator, h: int, w: int, beta: float) -> np.ndarray:
    """Zero-mean, unit-std random field with amplitude spectrum ``1 / f**beta``."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fy**2 + fx**2)
    f[0, 0] = 1.0
    spectrum = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f**beta
    spectrum[0, 0] = 0.0
    field = np.fft.irfft2(spectrum, s=(h, w))
    return field / field.std()


def synth_canvas(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    beta = rng.uniform(1.0, 1.5)
    lum = power_law_field(rng, h, w, beta)
    tint = np.stack([power_law_field(rng, h, w, 1.8) for _ in range(3)], axis=-1)
    img = 0.5 + rng.uniform(0.06, 0.14) * lum[..., None] + 0.05 * tint + rng.uniform(-0.1, 0.1, size=3)

    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(4, 12)):
        color = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(min(6, h / 8), h / 5), rng.uniform(min(6, w / 8), w / 5)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 1.0 + 0.08 * power_law_field(rng, h, w, 1.0)[..., None]
        img = np.where(mask[..., None], color * shade, img)

    # mild optical softness, varies per clip
    sigma = rng.uniform(0.0, 0.6)
    if sigma > 0.05:
        img = gaussian_filter(img, sigma=(sigma, sigma, 0))
    return np.clip(img, 0.0, 1.0)


def synth_clip(rng: np.random.Generator, size: int = 256, n_frames: int = 30) -> np.ndarray:
    """Return ``(n_frames, size, size, 3)`` float frames of a panning synthetic scene."""
    vy, vx = rng.integers(-2, 3, size=2)
    margin = int(max(abs(vy), abs(vx))) * n_frames
    canvas = synth_canvas(rng, size + margin, size + margin)
    oy = margin if vy < 0 else 0
    ox = margin if vx < 0 else 0
    noise_sigma = rng.uniform(0.002, 0.01)
    frames = []
    for t in range(n_frames):
        y, x = oy + t * vy, ox + t * vx
        frame = canvas[y : y + size, x : x + size]
        frames.append(np.clip(frame + noise_sigma * rng.standard_normal(frame.shape), 0.0, 1.0))
    return np.stack(frames)


def write_source_corpus(
    out_dir: str | Path, n_clips: int = 60, size: int = 256, n_frames: int = 30, seed: int = 0
) -> list[Path]:
    """Write ``n_clips`` synthetic clips as ``out_dir/clipNNNN/%06d.png``."""
    out_dir = Path(out_dir)
    dirs = []
    for i in range(n_clips):
        rng = np.random.default_rng([seed, i])
        d = out_dir / f"clip{i:04d}"
        write_frames(d, synth_clip(rng, size, n_frames))
        dirs.append(d)
    return dirs
