"""Video clips and the per-clip forging operations."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .compress import CompressionParams, compress_frame
from .resample import check_kernel, resample

REAL, FAKE = "real", "fake"


@dataclass(frozen=True)
class Provenance:
    upscaler: str
    scale: int


@dataclass
class VideoClip:
    """An ordered stack of frames, ``(T, H, W, 3)`` floats in ``[0, 1]``."""

    id: str
    frames: np.ndarray
    source_label: str = REAL
    provenance: Optional[Provenance] = None
    compression_quality: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"clip frames must be (T, H, W, 3), got {self.frames.shape}")
        if len(self.frames) == 0:
            raise ValueError("clip has no frames")
        if self.source_label not in (REAL, FAKE):
            raise ValueError(f"bad label {self.source_label!r}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]


def center_crop_divisible(frames: np.ndarray, scale: int) -> np.ndarray:
    """Crop ``(T, H, W, C)`` frames to the largest centred region divisible by ``scale``."""
    h, w = frames.shape[1:3]
    nh, nw = h - h % scale, w - w % scale
    top, left = (h - nh) // 2, (w - nw) // 2
    return frames[:, top : top + nh, left : left + nw]


def make_fake(clip: VideoClip, scale: int, down: str = "bilinear", up: str = "bilinear") -> VideoClip:
    """Forge a fake-resolution clip: downscale by ``scale``, then upscale back.

    Frames whose size is not divisible by ``scale`` are centre-cropped first,
    so the output keeps the (cropped) input dimensions.
    """
    if int(scale) != scale or scale < 2:
        raise ValueError(f"scale must be an integer >= 2, got {scale}")
    if clip.source_label != REAL:
        raise ValueError("make_fake expects a real-resolution clip")
    check_kernel(down)
    check_kernel(up)
    frames = center_crop_divisible(clip.frames, scale)
    h, w = frames.shape[1:3]
    out = np.stack([resample(resample(f, w // scale, h // scale, down), w, h, up) for f in frames])
    return VideoClip(
        id=clip.id,
        frames=out,
        source_label=FAKE,
        provenance=Provenance(up, int(scale)),
        compression_quality=clip.compression_quality,
    )


def compress_proxy(
    clip: VideoClip,
    params: CompressionParams,
    backend: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> VideoClip:
    """Lossy-compress every frame at quality ``params.q``.

    ``backend`` swaps the built-in block-DCT quantizer for any callable taking
    ``(frames, q)``, e.g. :class:`~srdetect.media_forge.compress.ExternalEncoder`.
    """
    if not isinstance(params, CompressionParams):
        raise TypeError("params must be CompressionParams")
    if backend is None:
        frames = np.stack([compress_frame(f, params.q) for f in clip.frames])
    else:
        frames = np.asarray(backend(clip.frames, params.q), dtype=np.float64)
        if frames.shape != clip.frames.shape:
            raise ValueError("compression backend changed the clip geometry")
    return replace(clip, frames=frames, compression_quality=params.q)


def select_frame_window(clip: VideoClip, block_len: int = 100, take: tuple[int, int] = (10, 29)) -> VideoClip:
    """Keep in-block frames ``take[0]..take[1]`` (inclusive) of every full block."""
    first, last = take
    if not 0 <= first <= last < block_len:
        raise ValueError(f"window {take} does not fit a block of {block_len}")
    n_blocks = len(clip) // block_len
    if n_blocks == 0:
        raise ValueError(f"clip has {len(clip)} frames, fewer than one block of {block_len}")
    idx = [b * block_len + i for b in range(n_blocks) for i in range(first, last + 1)]
    return replace(clip, frames=clip.frames[idx])
