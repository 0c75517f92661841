"""Numbered-PNG frame sequences on disk (``%06d.png``, 8-bit RGB)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

FRAME_PATTERN = "{:06d}.png"


def list_frames(directory: str | Path) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def read_frame(path: str | Path) -> np.ndarray:
    """Decode one PNG into a ``(H, W, 3)`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_frames(directory: str | Path, as_float: bool = True) -> np.ndarray:
    """Read every frame of a clip directory, in filename order.

    Returns a ``(T, H, W, 3)`` array, float64 in ``[0, 1]`` unless
    ``as_float`` is false (then raw uint8).
    """
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = np.stack([read_frame(p) for p in paths])
    return frames.astype(np.float64) / 255.0 if as_float else frames


def to_uint8(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_frames(directory: str | Path, frames: np.ndarray) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(to_uint8(np.asarray(frames))):
        path = directory / FRAME_PATTERN.format(i)
        # fixed compress_level keeps the bytes reproducible
        Image.fromarray(frame, mode="RGB").save(path, compress_level=1)
        paths.append(path)
    return paths
