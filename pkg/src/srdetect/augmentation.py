"""Model inputs: aligned crops, cutout, ablation-only transforms and triplet sampling.

A :class:`FramePair` holds ``k`` consecutive frames of one clip as a
``(k, H, W, 3)`` array. Every spatial transform draws its parameters once and
applies them to all ``k`` frames, so the frames stay pixel-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InsufficientDataError
from .media_forge.clips import FAKE, REAL
from .media_forge.compress import Q_MAX, Q_MIN, compress_frame
from .media_forge.forge import DatasetManifest, ManifestEntry
from .media_forge.frames import read_frames

ABLATIONS = ("blur", "gauss_noise", "jpeg_proxy")
CUTOUT_FILL = 0.5


@dataclass
class FramePair:
    """``frames`` is uint8 (0..255) straight from disk or float in ``[0, 1]``."""

    frames: np.ndarray
    clip_id: str
    start_index: int
    label: str
    source_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be (k, H, W, 3), got {self.frames.shape}")
        if not self.source_id:
            self.source_id = self.clip_id

    @property
    def k(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def as_float(self) -> np.ndarray:
        if self.frames.dtype == np.uint8:
            return self.frames.astype(np.float32) / np.float32(255.0)
        return self.frames

    def channels_first(self) -> np.ndarray:
        """``(3k, H, W)`` float32 stack, frame-major, as the encoder expects."""
        f = np.asarray(self.as_float(), dtype=np.float32)
        return f.transpose(0, 3, 1, 2).reshape(3 * self.k, self.height, self.width)


@dataclass
class AugConfig:
    crop: int = 64
    cutout_count: int = 1
    # None -> [crop // 8, crop // 4]
    cutout_size_range: Optional[tuple[int, int]] = None
    cutout_fill: float = CUTOUT_FILL
    ablation: Optional[str] = None
    blur_sigma: tuple[float, float] = (0.5, 1.5)
    noise_sigma: tuple[float, float] = (0.005, 0.02)
    jpeg_q: tuple[int, int] = (Q_MIN, Q_MAX)
    # negative reuses the anchor's cutout rectangles (the crop window is always shared)
    share_cutout: bool = False

    def __post_init__(self):
        if self.cutout_size_range is None:
            self.cutout_size_range = (max(1, self.crop // 8), max(1, self.crop // 4))
        self.cutout_size_range = tuple(self.cutout_size_range)
        self.blur_sigma, self.noise_sigma, self.jpeg_q = tuple(self.blur_sigma), tuple(self.noise_sigma), tuple(self.jpeg_q)
        lo, hi = self.cutout_size_range
        if self.cutout_count < 0:
            raise ValueError("cutout_count must be >= 0")
        if not 1 <= lo <= hi < self.crop:
            raise ValueError(f"cutout sizes {self.cutout_size_range} must satisfy 1 <= min <= max < crop")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation transform {self.ablation!r}")


def crop_offset(height: int, width: int, size: int, rng: np.random.Generator) -> tuple[int, int]:
    if size > min(height, width) or size < 1:
        raise ValueError(f"crop size {size} does not fit a {width}x{height} frame")
    return int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))


def crop_at(pair: FramePair, top: int, left: int, size: int) -> FramePair:
    if top < 0 or left < 0 or top + size > pair.height or left + size > pair.width:
        raise ValueError("crop window falls outside the frame")
    return replace(pair, frames=pair.frames[:, top : top + size, left : left + size])


def center_crop(pair: FramePair, size: int) -> FramePair:
    if size > min(pair.height, pair.width):
        raise ValueError(f"crop size {size} does not fit a {pair.width}x{pair.height} frame")
    return crop_at(pair, (pair.height - size) // 2, (pair.width - size) // 2, size)


def random_crop(pair: FramePair, size: int, rng: np.random.Generator) -> FramePair:
    """Crop all ``k`` frames at one random offset."""
    top, left = crop_offset(pair.height, pair.width, size, rng)
    return crop_at(pair, top, left, size)


def draw_cutout_rects(height: int, width: int, cfg: AugConfig, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """Rectangles ``(y0, y1, x0, x1)`` centred uniformly in the frame, clipped at the borders."""
    lo, hi = cfg.cutout_size_range
    rects = []
    for _ in range(cfg.cutout_count):
        rh, rw = (int(s) for s in rng.integers(lo, hi + 1, size=2))
        cy, cx = int(rng.integers(0, height)), int(rng.integers(0, width))
        y0, x0 = max(0, cy - rh // 2), max(0, cx - rw // 2)
        rects.append((y0, min(height, cy - rh // 2 + rh), x0, min(width, cx - rw // 2 + rw)))
    return rects


def apply_cutout(pair: FramePair, rects, fill: float = CUTOUT_FILL) -> FramePair:
    if not rects:
        return pair
    frames = np.array(pair.as_float(), dtype=np.float32, copy=True)
    for y0, y1, x0, x1 in rects:
        frames[:, y0:y1, x0:x1, :] = fill
    return replace(pair, frames=frames)


def cutout(pair: FramePair, cfg: AugConfig, rng: np.random.Generator) -> FramePair:
    """Mask ``cfg.cutout_count`` rectangles with mid-gray, identically in every frame."""
    return apply_cutout(pair, draw_cutout_rects(pair.height, pair.width, cfg, rng), cfg.cutout_fill)


def gaussian_blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Spatial blur of a ``(k, H, W, 3)`` stack; ``sigma == 0`` is the identity."""
    return gaussian_filter(frames, sigma=(0.0, sigma, sigma, 0.0), mode="nearest")


def ablation_transform(pair: FramePair, which: str, rng: np.random.Generator, cfg: AugConfig | None = None) -> FramePair:
    """Blur, additive noise or compression-proxy degradation used by the augmentation study."""
    cfg = cfg or AugConfig()
    frames = np.asarray(pair.as_float(), dtype=np.float64)
    if which == "blur":
        out = gaussian_blur(frames, float(rng.uniform(*cfg.blur_sigma)))
    elif which == "gauss_noise":
        sigma = float(rng.uniform(*cfg.noise_sigma))
        out = np.clip(frames + sigma * rng.standard_normal(frames.shape), 0.0, 1.0)
    elif which == "jpeg_proxy":
        q = int(rng.integers(cfg.jpeg_q[0], cfg.jpeg_q[1] + 1))
        out = np.stack([compress_frame(f, q) for f in frames])
    else:
        raise ValueError(f"unknown ablation transform {which!r}; expected one of {ABLATIONS}")
    return replace(pair, frames=out.astype(np.float32))


def augment(
    pair: FramePair,
    cfg: AugConfig,
    rng: np.random.Generator,
    offset: tuple[int, int] | None = None,
    rects=None,
) -> FramePair:
    """Crop, then cutout, then the configured ablation transform (if any).

    ``offset`` and ``rects`` pin the crop window and cutout rectangles, so two
    pairs with identical content can receive identical geometry.
    """
    if offset is None:
        offset = crop_offset(pair.height, pair.width, cfg.crop, rng)
    out = crop_at(pair, *offset, cfg.crop)
    if rects is None:
        rects = draw_cutout_rects(cfg.crop, cfg.crop, cfg, rng)
    out = apply_cutout(out, rects, cfg.cutout_fill)
    if cfg.ablation is not None:
        out = ablation_transform(out, cfg.ablation, rng, cfg)
    return out


class FrameStore:
    """Loads manifest clips as uint8 arrays and keeps them in memory."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache: dict[str, np.ndarray] = {}

    def frames(self, entry: ManifestEntry) -> np.ndarray:
        arr = self._cache.get(entry.clip_id)
        if arr is None:
            arr = read_frames(self.manifest.resolve(entry), as_float=False)
            arr.setflags(write=False)
            self._cache[entry.clip_id] = arr
        return arr

    def pair(self, entry: ManifestEntry, start: int, k: int) -> FramePair:
        frames = self.frames(entry)
        if not 0 <= start <= len(frames) - k:
            raise ValueError(f"{entry.clip_id}: window [{start}, {start + k}) out of range")
        return FramePair(frames[start : start + k], entry.clip_id, start, entry.label, entry.source_id)


@dataclass
class TripletSample:
    anchor: FramePair
    positive: FramePair
    negative: FramePair

    def __post_init__(self):
        a, p, n = self.anchor, self.positive, self.negative
        if a.label != REAL or p.label != REAL or n.label != FAKE:
            raise ValueError("triplet labels must be (real, real, fake)")
        if n.source_id != a.source_id or n.start_index != a.start_index:
            raise ValueError("negative must be the anchor's upscaled counterpart")
        if p.source_id == a.source_id:
            raise ValueError("positive must come from a different clip")


@dataclass
class TripletSampler:
    """Draws (anchor, positive, negative) triplets from one manifest split.

    Positives come from the same compression regime as the anchor; negatives
    are an upscaled version of the anchor clip in that regime, at the same
    start index, with the upscaler chosen uniformly.
    """

    manifest: DatasetManifest
    split: Optional[str] = "train"
    k: int = 2
    store: Optional[FrameStore] = None
    _reals: dict = field(default_factory=dict, init=False, repr=False)
    _fakes: dict = field(default_factory=dict, init=False, repr=False)
    anchors: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        self.store = self.store or FrameStore(self.manifest)
        entries = self.manifest.select(split=self.split)
        for e in entries:
            if e.frame_count < self.k:
                continue
            if e.label == REAL:
                self._reals.setdefault(e.regime, []).append(e)
            else:
                self._fakes.setdefault((e.source_id, e.regime), []).append(e)
        for regime, reals in self._reals.items():
            if len({e.source_id for e in reals}) < 2:
                continue
            self.anchors.extend(e for e in reals if (e.source_id, e.regime) in self._fakes)
        if not self.anchors:
            raise InsufficientDataError(
                f"split {self.split!r} needs >= 2 real clips per regime and a fake of the anchor clip"
            )

    def sample(self, rng: np.random.Generator, anchor: ManifestEntry | None = None) -> TripletSample:
        if anchor is None:
            anchor = self.anchors[int(rng.integers(len(self.anchors)))]
        fakes = self._fakes.get((anchor.source_id, anchor.regime))
        if not fakes:
            raise InsufficientDataError(f"no fake counterpart for {anchor.clip_id}")
        others = [e for e in self._reals[anchor.regime] if e.source_id != anchor.source_id]
        neg = fakes[int(rng.integers(len(fakes)))]
        pos = others[int(rng.integers(len(others)))]
        n_start = min(anchor.frame_count, neg.frame_count) - self.k
        start = int(rng.integers(0, n_start + 1))
        p_start = int(rng.integers(0, pos.frame_count - self.k + 1))
        return TripletSample(
            self.store.pair(anchor, start, self.k),
            self.store.pair(pos, p_start, self.k),
            self.store.pair(neg, start, self.k),
        )


def sample_triplet(manifest: DatasetManifest, rng: np.random.Generator, k: int = 2, split: str | None = "train") -> TripletSample:
    return TripletSampler(manifest, split=split, k=k).sample(rng)
