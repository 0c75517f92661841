"""Forging a labelled real/fake corpus and its JSON manifest."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..errors import EmptyInputError
from .clips import FAKE, REAL, Provenance, VideoClip, center_crop_divisible, compress_proxy, make_fake, select_frame_window
from .compress import Q_MAX, Q_MIN, CompressionParams
from .frames import list_frames, read_frames, write_frames
from .resample import check_kernel

MANIFEST_NAME = "manifest.json"
RAW, COMPRESSED = "raw", "crf"
SPLITS = ("train", "val", "test")


def digest_of(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def clip_seed(seed: int, clip_id: str) -> int:
    """Per-clip RNG seed, independent of processing order."""
    return int.from_bytes(hashlib.sha256(f"{seed}:{clip_id}".encode()).digest()[:8], "little")


@dataclass
class ForgeConfig:
    scale: int = 2
    down: str = "bilinear"
    upscalers: tuple[str, ...] = ("bicubic",)
    # name -> directory holding <clip_id>/%06d.png frames upscaled by an outside tool
    external_upscalers: dict[str, str] = field(default_factory=dict)
    q_range: tuple[int, int] = (Q_MIN, Q_MAX)
    variants: tuple[str, ...] = (RAW, COMPRESSED)
    # (block_len, first, last); None keeps every frame
    frame_window: Optional[tuple[int, int, int]] = None
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        self.upscalers = tuple(self.upscalers)
        self.variants = tuple(self.variants)
        self.q_range = tuple(self.q_range)
        self.split_fractions = tuple(self.split_fractions)
        if self.frame_window is not None:
            self.frame_window = tuple(self.frame_window)
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        check_kernel(self.down)
        for up in self.upscalers:
            check_kernel(up)
        lo, hi = self.q_range
        if not Q_MIN <= lo <= hi <= Q_MAX:
            raise ValueError(f"q_range must lie inside [{Q_MIN}, {Q_MAX}]")
        if not self.upscalers and not self.external_upscalers:
            raise ValueError("at least one upscaler is required")
        if not set(self.variants) <= {RAW, COMPRESSED} or not self.variants:
            raise ValueError(f"variants must be a non-empty subset of {(RAW, COMPRESSED)}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError("split fractions must be non-negative and sum to 1")

    @property
    def upscaler_names(self) -> list[str]:
        return list(self.upscalers) + sorted(self.external_upscalers)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ForgeConfig":
        return cls(**d)


@dataclass
class ManifestEntry:
    clip_id: str
    source_id: str
    path: str
    label: str
    upscaler: Optional[str]
    scale_factor: Optional[int]
    q: Optional[int]
    frame_count: int
    split: str

    @property
    def compressed(self) -> bool:
        return self.q is not None

    @property
    def regime(self) -> str:
        return COMPRESSED if self.compressed else RAW


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    forge_config_digest: str
    config: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    root: Optional[Path] = field(default=None, compare=False)

    def to_json(self) -> str:
        doc = {
            "format": "srdetect-manifest",
            "toolkit_version": __version__,
            "seed": self.seed,
            "forge_config_digest": self.forge_config_digest,
            "config": self.config,
            "entries": [asdict(e) for e in self.entries],
            "errors": self.errors,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        doc = json.loads(path.read_text())
        if doc.get("format") != "srdetect-manifest":
            raise ValueError(f"{path} is not a dataset manifest")
        return cls(
            entries=[ManifestEntry(**e) for e in doc["entries"]],
            seed=doc["seed"],
            forge_config_digest=doc["forge_config_digest"],
            config=doc.get("config", {}),
            errors=doc.get("errors", []),
            root=path.parent,
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def resolve(self, entry: ManifestEntry) -> Path:
        return (self.root or Path(".")) / entry.path

    def select(self, split: str | None = None, label: str | None = None, regime: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (label is None or e.label == label)
            and (regime is None or e.regime == regime)
        ]

    def validate(self) -> None:
        """Check entry provenance and that each path decodes to ``frame_count`` frames."""
        for e in self.entries:
            if e.label == FAKE and not e.upscaler:
                raise ValueError(f"fake entry {e.clip_id} lacks upscaler provenance")
            if e.label == REAL and (e.upscaler or e.scale_factor):
                raise ValueError(f"real entry {e.clip_id} carries upscaler provenance")
            n = len(list_frames(self.resolve(e)))
            if n != e.frame_count:
                raise ValueError(f"{e.clip_id}: expected {e.frame_count} frames, found {n}")


def assign_splits(source_ids: list[str], fractions: tuple[float, float, float], seed: int) -> dict[str, str]:
    ids = sorted(source_ids)
    order = np.random.default_rng(clip_seed(seed, "__splits__")).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    out = {}
    for rank, i in enumerate(order):
        out[ids[i]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def _load_source(path: Path, config: ForgeConfig) -> np.ndarray:
    frames = read_frames(path)
    if config.frame_window is not None:
        block_len, first, last = config.frame_window
        frames = select_frame_window(VideoClip("src", frames), block_len, (first, last)).frames
    return center_crop_divisible(frames, config.scale)


def _forge_one(job: tuple) -> tuple[list[dict], list[dict]]:
    source_id, src_path, out_dir, config, seed, split = job
    out_dir = Path(out_dir)
    try:
        real = VideoClip(source_id, _load_source(Path(src_path), config))
    except Exception as exc:  # undecodable or inconsistent source, reported not raised
        return [], [{"clip_id": source_id, "error": f"{type(exc).__name__}: {exc}"}]

    rng = np.random.default_rng(clip_seed(seed, source_id))
    q = int(rng.integers(config.q_range[0], config.q_range[1] + 1))

    variants: list[tuple[str, VideoClip]] = [("real", real)]
    for up in config.upscalers:
        variants.append((f"{up}_x{config.scale}", make_fake(real, config.scale, config.down, up)))
    errors = []
    for name, ext_dir in sorted(config.external_upscalers.items()):
        try:
            frames = _load_source(Path(ext_dir) / source_id, config)
            if frames.shape != real.frames.shape:
                raise ValueError(f"external frames {frames.shape} do not match source {real.frames.shape}")
        except Exception as exc:
            errors.append({"clip_id": f"{source_id}:{name}", "error": f"{type(exc).__name__}: {exc}"})
            continue
        variants.append((name, VideoClip(source_id, frames, FAKE, Provenance(name, config.scale))))

    entries = []
    for tag, clip in variants:
        for regime in config.variants:
            if regime == COMPRESSED:
                clip_out = compress_proxy(clip, CompressionParams(q))
            else:
                clip_out = clip
            rel = f"{regime}/{tag}/{source_id}"
            write_frames(out_dir / rel, clip_out.frames)
            prov = clip.provenance
            entries.append(
                asdict(
                    ManifestEntry(
                        clip_id=f"{source_id}:{tag}:{regime}",
                        source_id=source_id,
                        path=rel,
                        label=clip.source_label,
                        upscaler=prov.upscaler if prov else None,
                        scale_factor=prov.scale if prov else None,
                        q=q if regime == COMPRESSED else None,
                        frame_count=len(clip_out),
                        split=split,
                    )
                )
            )
    return entries, errors


def find_source_clips(source_dir: str | Path) -> dict[str, Path]:
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise EmptyInputError(f"{source_dir} is not a directory")
    found = {p.name: p for p in sorted(source_dir.iterdir()) if p.is_dir() and list_frames(p)}
    if not found:
        raise EmptyInputError(f"no clip directories with PNG frames under {source_dir}")
    return found


def forge_dataset(
    source_dir: str | Path,
    out_dir: str | Path,
    config: ForgeConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> DatasetManifest:
    """Forge real and fake variants of every source clip and write ``manifest.json``.

    Each source clip yields one real entry per regime (raw, compressed) and one
    fake entry per upscaler and regime. Fakes are downscaled, upscaled and then
    compressed with the same ``q`` as their real counterpart; ``q`` is drawn
    uniformly from ``config.q_range`` with an RNG keyed on (seed, clip id), so
    the output does not depend on ``workers``.

    Sources that fail to decode are skipped and listed in ``manifest.errors``.
    """
    config = config or ForgeConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = find_source_clips(source_dir)
    splits = assign_splits(list(sources), config.split_fractions, seed)
    jobs = [(sid, str(p), str(out_dir), config, seed, splits[sid]) for sid, p in sources.items()]

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_forge_one, jobs))
    else:
        results = [_forge_one(j) for j in jobs]

    entries, errors = [], []
    for es, errs in results:
        entries.extend(ManifestEntry(**e) for e in es)
        errors.extend(errs)
    cfg = config.to_dict()
    manifest = DatasetManifest(
        entries=entries,
        seed=seed,
        forge_config_digest=digest_of(cfg),
        config=cfg,
        errors=errors,
        root=out_dir,
    )
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest
