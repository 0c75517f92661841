"""Inference, the per-video frame-fraction rule, and corpus metrics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .augmentation import FramePair, FrameStore, center_crop
from .errors import EmptyInputError
from .media_forge.clips import FAKE, REAL
from .media_forge.forge import COMPRESSED, RAW, DatasetManifest, ManifestEntry
from .network import ModelParams, forward

DEFAULT_CROP = 64


@dataclass
class ConfusionCounts:
    """Binary confusion counts with fake-resolution as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, is_fake: bool, predicted_fake: bool) -> None:
        if is_fake:
            if predicted_fake:
                self.tp += 1
            else:
                self.fn += 1
        elif predicted_fake:
            self.fp += 1
        else:
            self.tn += 1

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_labels(cls, is_fake: Sequence[bool], predicted_fake: Sequence[bool]) -> "ConfusionCounts":
        counts = cls()
        for t, p in zip(is_fake, predicted_fake, strict=True):
            counts.add(bool(t), bool(p))
        return counts


def compute_metrics(counts: ConfusionCounts) -> dict[str, Optional[float]]:
    """Accuracy, balanced accuracy and F1.

    A metric whose denominator is empty is reported as ``None`` rather than 0;
    balanced accuracy needs both classes present.
    """
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    total = counts.total
    accuracy = (tp + tn) / total if total else None
    if tp + fn and tn + fp:
        balanced = 0.5 * (tp / (tp + fn) + tn / (tn + fp))
    else:
        balanced = None
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None
    return {"accuracy": accuracy, "balanced_accuracy": balanced, "f1": f1}


def aggregate_verdict(probabilities: Sequence[float], p_threshold: float = 0.5, frac_threshold: float = 0.05) -> tuple[float, bool]:
    """Fraction of windows with probability strictly above ``p_threshold``,
    and whether it reaches ``frac_threshold`` (inclusive)."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("no windows to aggregate")
    fraction = int(np.count_nonzero(probs > p_threshold)) / probs.size
    return fraction, fraction >= frac_threshold


def tile_offsets(height: int, width: int, size: int) -> list[tuple[int, int]]:
    """Non-overlapping ``size`` tiles covering the centred grid that fits the frame."""
    ny, nx = height // size, width // size
    oy, ox = (height - ny * size) // 2, (width - nx * size) // 2
    return [(oy + i * size, ox + j * size) for i in range(ny) for j in range(nx)]


def _inference_crops(pair: FramePair, crop: int, tiled: bool) -> list[np.ndarray]:
    if pair.height < crop or pair.width < crop:
        raise ValueError(f"frames {pair.width}x{pair.height} are smaller than the {crop}px crop")
    if not tiled:
        return [center_crop(pair, crop).channels_first()]
    frames = pair.as_float()
    out = []
    for y, x in tile_offsets(pair.height, pair.width, crop):
        sub = FramePair(frames[:, y : y + crop, x : x + crop], pair.clip_id, pair.start_index, pair.label)
        out.append(sub.channels_first())
    return out


@torch.no_grad()
def score_pairs(params: ModelParams, pairs: Sequence[FramePair], crop: int | None = None, tiled: bool = False, batch_size: int = 256) -> np.ndarray:
    """P(upscaled) for each pair; tiled scoring averages the tile probabilities."""
    crop = crop or params.meta.get("crop", DEFAULT_CROP)
    k = params.config.k_frames
    crops, owners = [], []
    for i, pair in enumerate(pairs):
        if pair.k != k:
            raise ValueError(f"model expects {k} frames per window, got {pair.k}")
        cs = _inference_crops(pair, crop, tiled)
        crops.extend(cs)
        owners.extend([i] * len(cs))
    dtype = next(iter(params.tensors.values())).dtype
    probs = np.empty(len(crops), dtype=np.float64)
    for s in range(0, len(crops), batch_size):
        x = torch.from_numpy(np.stack(crops[s : s + batch_size])).to(dtype)
        _, _, logits = forward(params, x)
        probs[s : s + batch_size] = torch.sigmoid(logits[:, 0]).double().numpy()
    owners = np.asarray(owners)
    return np.array([probs[owners == i].mean() for i in range(len(pairs))])


def score_pair(params: ModelParams, pair: FramePair, crop: int | None = None, tiled: bool = False) -> float:
    return float(score_pairs(params, [pair], crop, tiled)[0])


def clip_windows(frames: np.ndarray, k: int, stride: int = 1, clip_id: str = "", label: str = REAL) -> list[FramePair]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(frames) < k:
        raise ValueError(f"clip has {len(frames)} frames, fewer than the {k}-frame window")
    return [FramePair(frames[s : s + k], clip_id, s, label) for s in range(0, len(frames) - k + 1, stride)]


@dataclass
class VideoVerdict:
    clip_id: str
    probabilities: list[float]
    fraction: float
    verdict: str
    label: Optional[str] = None
    source_id: Optional[str] = None
    upscaler: Optional[str] = None
    regime: Optional[str] = None
    q: Optional[int] = None

    @property
    def is_fake(self) -> bool:
        return self.verdict == FAKE


def detect_video(
    params: ModelParams,
    frames: np.ndarray,
    pair_stride: int = 1,
    p_threshold: float = 0.5,
    frac_threshold: float = 0.05,
    crop: int | None = None,
    tiled: bool = False,
    clip_id: str = "",
) -> VideoVerdict:
    """Score every ``k``-frame window and apply the frame-fraction rule."""
    windows = clip_windows(frames, params.config.k_frames, pair_stride, clip_id)
    probs = score_pairs(params, windows, crop, tiled)
    fraction, is_fake = aggregate_verdict(probs, p_threshold, frac_threshold)
    return VideoVerdict(clip_id, [float(p) for p in probs], fraction, FAKE if is_fake else REAL)


def _stratum(video: VideoVerdict) -> str:
    return f"{video.upscaler if video.label == FAKE else REAL}|{video.regime}"


@dataclass
class DetectionReport:
    split: str
    settings: dict
    videos: list[VideoVerdict]
    counts: dict[str, dict] = field(default_factory=dict)
    metrics: dict[str, dict] = field(default_factory=dict)
    window_counts: dict[str, dict] = field(default_factory=dict)
    window_metrics: dict[str, dict] = field(default_factory=dict)
    config_digest: str = ""
    checkpoint_digest: str = ""

    def metric(self, group: str, name: str = "balanced_accuracy", level: str = "video") -> Optional[float]:
        table = self.metrics if level == "video" else self.window_metrics
        return table.get(group, {}).get(name)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DetectionReport":
        doc = json.loads(text)
        doc["videos"] = [VideoVerdict(**v) for v in doc["videos"]]
        return cls(**doc)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def render(self) -> str:
        """Plain-text metrics table, one row per group."""
        header = f"{'group':<28}{'n':>6}{'acc':>9}{'b-acc':>9}{'f1':>9}{'win b-acc':>11}"
        lines = [header, "-" * len(header)]

        def fmt(v):
            return f"{v:9.3f}" if v is not None else f"{'n/a':>9}"

        for group in self.metrics:
            m, wm = self.metrics[group], self.window_metrics.get(group, {})
            n = sum(self.counts[group].values())
            wb = wm.get("balanced_accuracy")
            lines.append(
                f"{group:<28}{n:>6}{fmt(m['accuracy'])}{fmt(m['balanced_accuracy'])}{fmt(m['f1'])}"
                + (f"{wb:11.3f}" if wb is not None else f"{'n/a':>11}")
            )
        return "\n".join(lines)

    def csv_rows(self) -> list[dict]:
        rows = []
        for group, m in self.metrics.items():
            rows.append({"group": group, **self.counts[group], **m,
                         **{f"window_{k}": v for k, v in self.window_metrics.get(group, {}).items()}})
        return rows


def build_report(videos: list[VideoVerdict], split: str, settings: dict, p_threshold: float, config_digest: str = "", checkpoint_digest: str = "") -> DetectionReport:
    """Tally verdicts overall, per compression regime and per (upscaler, regime) stratum.

    Videos without a ground-truth label keep their verdicts in the report but
    do not enter any count.
    """
    videos = sorted(videos, key=lambda v: v.clip_id)
    labeled = [v for v in videos if v.label is not None]
    groups: dict[str, ConfusionCounts] = {"overall": ConfusionCounts()}
    wgroups: dict[str, ConfusionCounts] = {"overall": ConfusionCounts()}
    for regime in (RAW, COMPRESSED):
        if any(v.regime == regime for v in labeled):
            groups[regime] = ConfusionCounts()
            wgroups[regime] = ConfusionCounts()
    for key in sorted({_stratum(v) for v in labeled if v.regime is not None}):
        groups[key] = ConfusionCounts()
        wgroups[key] = ConfusionCounts()
    for v in labeled:
        truth = v.label == FAKE
        wc = ConfusionCounts.from_labels([truth] * len(v.probabilities), [p > p_threshold for p in v.probabilities])
        keys = ("overall",) if v.regime is None else ("overall", v.regime, _stratum(v))
        for key in keys:
            groups[key].add(truth, v.is_fake)
            wgroups[key] = wgroups[key] + wc
    return DetectionReport(
        split=split,
        settings=settings,
        videos=videos,
        counts={k: asdict(c) for k, c in groups.items()},
        metrics={k: compute_metrics(c) for k, c in groups.items()},
        window_counts={k: asdict(c) for k, c in wgroups.items()},
        window_metrics={k: compute_metrics(c) for k, c in wgroups.items()},
        config_digest=config_digest,
        checkpoint_digest=checkpoint_digest,
    )


def evaluate_corpus(
    params: ModelParams,
    manifest: DatasetManifest,
    split: str = "test",
    pair_stride: int = 1,
    p_threshold: float = 0.5,
    frac_threshold: float = 0.05,
    crop: int | None = None,
    tiled: bool = False,
    store: FrameStore | None = None,
    config_digest: str = "",
) -> DetectionReport:
    """Video-level verdicts for every clip of ``split`` plus stratified metrics."""
    entries: list[ManifestEntry] = sorted(manifest.select(split=split), key=lambda e: e.clip_id)
    if not entries:
        raise EmptyInputError(f"split {split!r} is empty")
    store = store or FrameStore(manifest)
    videos = []
    for e in entries:
        v = detect_video(params, store.frames(e), pair_stride, p_threshold, frac_threshold, crop, tiled, e.clip_id)
        v.label, v.source_id, v.upscaler, v.regime, v.q = e.label, e.source_id, e.upscaler, e.regime, e.q
        videos.append(v)
    settings = {
        "pair_stride": pair_stride,
        "p_threshold": p_threshold,
        "frac_threshold": frac_threshold,
        "crop": crop or params.meta.get("crop", DEFAULT_CROP),
        "tiled": tiled,
        "manifest_digest": manifest.digest(),
    }
    return build_report(videos, split, settings, p_threshold, config_digest or params.config.digest(), params.digest())
