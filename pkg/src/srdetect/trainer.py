"""Optimization: warmup + cosine schedule, decoupled-weight-decay Adam, training and ablations."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .augmentation import AugConfig, FrameStore, TripletSampler, augment, crop_offset, draw_cutout_rects
from .detector import DetectionReport, evaluate_corpus
from .errors import DivergedTrainingError, EmptyInputError
from .media_forge.forge import COMPRESSED, RAW, DatasetManifest
from .network import EncoderConfig, ModelParams, forward, init_params, save_checkpoint
from .objectives import LossConfig, total_loss

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
LOG_FIELDS = ("step", "epoch", "lr", "l_ce", "l_t", "l_v", "total")


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    warmup_steps: int
    init_lr: float = 5e-6
    peak_lr: float = 2e-5
    final_lr: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need total_steps >= 1 and 0 <= warmup_steps <= total_steps")
        if not 0 <= self.init_lr <= self.peak_lr:
            raise ValueError("need 0 <= init_lr <= peak_lr")


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear warmup from ``init_lr`` to ``peak_lr``, then cosine decay to ``final_lr``."""
    s = schedule
    if not 0 <= step <= s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    if step < s.warmup_steps:
        return s.init_lr + (s.peak_lr - s.init_lr) * step / s.warmup_steps
    span = s.total_steps - s.warmup_steps
    if span == 0:
        return s.peak_lr
    progress = (step - s.warmup_steps) / span
    return s.final_lr + 0.5 * (s.peak_lr - s.final_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay over a name -> tensor mapping.

    Each step first shrinks the weights by ``lr * weight_decay`` and then
    applies the bias-corrected Adam delta.
    """

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}

    @torch.no_grad()
    def step(self, params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], lr: float, weight_decay: float) -> None:
        for name, g in grads.items():
            if not torch.isfinite(g).all():
                raise DivergedTrainingError(f"non-finite gradient for {name}")
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, theta in params.items():
            g = grads[name]
            m = self.m.setdefault(name, torch.zeros_like(theta))
            v = self.v.setdefault(name, torch.zeros_like(theta))
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            if weight_decay:
                theta.mul_(1.0 - lr * weight_decay)
            theta.sub_(lr * (m / c1) / ((v / c2).sqrt() + self.eps))


def optimizer_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamW, lr: float, weight_decay: float) -> AdamW:
    state.step(params, grads, lr, weight_decay)
    return state


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    peak_lr: float = 2e-5
    init_lr: float = 5e-6
    final_lr: float = 0.0
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    seed: int = 0
    k_frames: int = 2
    # anchor positions drawn from each real training clip per epoch
    anchors_per_clip: int = 1
    model: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    train_split: str = "train"
    val_split: Optional[str] = "val"
    # validation during training; the test split is always scored at stride 1
    eval_stride: int = 1
    eval_tiled: bool = True
    test_tiled: bool = True
    frac_threshold: float = 0.05
    p_threshold: float = 0.5
    deterministic: bool = True
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = EncoderConfig(**self.model)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.aug, dict):
            self.aug = AugConfig(**self.aug)
        if self.model.k_frames != self.k_frames:
            self.model = replace(self.model, k_frames=self.k_frames)
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"config schema version {self.schema_version} is not supported")
        if not 0 <= self.init_lr <= self.peak_lr:
            raise ValueError("need 0 <= init_lr <= peak_lr")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the variance term needs two rows)")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def desk_config(**overrides) -> TrainConfig:
    """Preset for a single-core CPU run on a small synthetic corpus.

    The default optimiser settings assume a pretrained backbone and many more
    steps. A randomly initialised desk_cnn needs a larger learning rate and
    several anchors per clip per epoch before it leaves the 0.5 plateau.
    Validation is tiled at window stride 4 to keep the per-epoch cost low.
    """
    base = dict(peak_lr=2e-3, init_lr=5e-4, anchors_per_clip=24, eval_stride=4, eval_tiled=True)
    base.update(overrides)
    return TrainConfig(**base)


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a JSON training config (schema in the README)."""
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))


def make_schedule(config: TrainConfig, steps_per_epoch: int) -> Schedule:
    return Schedule(
        total_steps=config.epochs * steps_per_epoch,
        warmup_steps=config.warmup_epochs * steps_per_epoch,
        init_lr=config.init_lr,
        peak_lr=config.peak_lr,
        final_lr=config.final_lr,
    )


def build_batch(sampler: TripletSampler, anchors, cfg: AugConfig, rng: np.random.Generator) -> torch.Tensor:
    """Stack augmented anchors, positives and negatives into one ``(3N, 3k, crop, crop)`` batch.

    Anchor and negative always share the crop window, so they show the same
    content. They also share cutout rectangles when ``cfg.share_cutout``.
    """
    a_rows, p_rows, n_rows = [], [], []
    for anchor in anchors:
        t = sampler.sample(rng, anchor)
        offset = crop_offset(t.anchor.height, t.anchor.width, cfg.crop, rng)
        rects = draw_cutout_rects(cfg.crop, cfg.crop, cfg, rng)
        a_rows.append(augment(t.anchor, cfg, rng, offset, rects).channels_first())
        n_rows.append(augment(t.negative, cfg, rng, offset, rects if cfg.share_cutout else None).channels_first())
        p_rows.append(augment(t.positive, cfg, rng).channels_first())
    return torch.from_numpy(np.stack(a_rows + p_rows + n_rows))


@dataclass
class TrainResult:
    params: ModelParams
    last_params: ModelParams
    log: list[dict]
    val_history: list[dict]
    best_epoch: int
    steps_per_epoch: int
    wall_clock: float
    out_dir: Optional[Path] = None


def _val_key(report: DetectionReport) -> tuple[float, float]:
    vb = report.metric("overall", level="video")
    wb = report.metric("overall", level="window")
    return (vb if vb is not None else -1.0, wb if wb is not None else -1.0)


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path | None = None,
    store: FrameStore | None = None,
) -> TrainResult:
    """Train the detector on ``manifest`` and keep the best-on-validation weights.

    Writes ``train_log.csv``, ``best.ckpt``, ``last.ckpt`` and ``config.json``
    into ``out_dir`` when given. On a non-finite loss or gradient the run stops
    with :class:`DivergedTrainingError`; the best checkpoint written so far is
    left in place. Passing ``store`` lets several runs share decoded frames.
    """
    started = time.perf_counter()
    if config.deterministic:
        torch.set_num_threads(1)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    store = store or FrameStore(manifest)
    sampler = TripletSampler(manifest, split=config.train_split, k=config.k_frames, store=store)
    slots = list(sampler.anchors) * config.anchors_per_clip
    n = config.batch_size
    steps_per_epoch = math.ceil(len(slots) / n)
    schedule = make_schedule(config, steps_per_epoch)
    rng = np.random.default_rng(config.seed)

    params = init_params(config.model, config.seed)
    params.meta.update({"crop": config.aug.crop, "train_config_digest": config.digest()})
    params.requires_grad_(True)
    optim = AdamW()
    has_val = config.val_split is not None and bool(manifest.select(split=config.val_split))
    best, best_key, best_epoch = params.clone(), None, -1
    rows, val_history = [], []
    meta = {"train_config_digest": config.digest(), "crop": config.aug.crop}

    def keep(p: ModelParams, name: str):
        if out_dir is not None:
            save_checkpoint(p, out_dir / name, meta)

    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(slots))
        for b in range(steps_per_epoch):
            chosen = [slots[i] for i in order[b * n : (b + 1) * n]]
            while len(chosen) < n:
                chosen.append(slots[int(rng.integers(len(slots)))])
            x = build_batch(sampler, chosen, config.aug, rng)
            _, z, logits = forward(params, x)
            z_a, z_p, z_n = z.split(n)
            c_a, c_p, c_n = logits.split(n)
            losses = total_loss(z_a, z_p, z_n, c_a, c_p, c_n, config.loss)
            if not torch.isfinite(losses.total):
                keep(best, "best.ckpt")
                raise DivergedTrainingError(f"non-finite loss at step {step}")
            names = list(params.tensors)
            grads = torch.autograd.grad(losses.total, [params.tensors[k] for k in names])
            lr = lr_at(step, schedule)
            try:
                optimizer_step(params.tensors, dict(zip(names, grads)), optim, lr, config.weight_decay)
            except DivergedTrainingError:
                keep(best, "best.ckpt")
                raise
            rows.append({"step": step, "epoch": epoch, "lr": lr, **losses.as_floats()})
            step += 1

        if has_val:
            frozen = params.clone()
            report = evaluate_corpus(
                frozen,
                manifest,
                config.val_split,
                pair_stride=config.eval_stride,
                p_threshold=config.p_threshold,
                frac_threshold=config.frac_threshold,
                tiled=config.eval_tiled,
                store=store,
            )
            key = _val_key(report)
            val_history.append({"epoch": epoch, "video_b_acc": key[0], "window_b_acc": key[1]})
            log.info("epoch %d: val b-acc video=%.3f window=%.3f", epoch, *key)
            if best_key is None or key >= best_key:
                best, best_key, best_epoch = frozen, key, epoch
                keep(best, "best.ckpt")

    last = params.clone()
    last.meta.update(params.meta)
    if not has_val:
        best, best_epoch = last, config.epochs - 1
    for p in (best, last):
        p.meta.update(meta)
    keep(best, "best.ckpt")
    keep(last, "last.ckpt")
    if out_dir is not None:
        write_log(rows, out_dir / "train_log.csv")
    return TrainResult(best, last, rows, val_history, best_epoch, steps_per_epoch, time.perf_counter() - started, out_dir)


def write_log(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


LOSS_GRID = {"CE": ("CE",), "CE+T": ("CE", "T"), "CE+T+V": ("CE", "T", "V")}
AUG_GRID = {
    "No augmentation": {"cutout_count": 0, "ablation": None},
    "Blur": {"cutout_count": 0, "ablation": "blur"},
    "JPEG": {"cutout_count": 0, "ablation": "jpeg_proxy"},
    "Gaussian Noise": {"cutout_count": 0, "ablation": "gauss_noise"},
    "Cutout": {"ablation": None},
}
FRAMES_GRID = {"1": 1, "2": 2, "3": 3}
AUG_ALIASES = {"none": "No augmentation", "blur": "Blur", "jpeg": "JPEG", "noise": "Gaussian Noise", "cutout": "Cutout"}


def grid_variants(grid: str, base: TrainConfig, only: list[str] | None = None) -> dict[str, TrainConfig]:
    """Named config variants for the ``aug``, ``loss`` or ``frames`` study."""
    if grid == "loss":
        out = {name: replace(base, loss=replace(base.loss, enabled_terms=terms)) for name, terms in LOSS_GRID.items()}
    elif grid == "aug":
        out = {name: replace(base, aug=replace(base.aug, **kw)) for name, kw in AUG_GRID.items()}
    elif grid == "frames":
        out = {name: replace(base, k_frames=k, model=replace(base.model, k_frames=k)) for name, k in FRAMES_GRID.items()}
    else:
        raise ValueError(f"unknown ablation grid {grid!r}; expected aug, loss or frames")
    if only:
        names = [AUG_ALIASES.get(o, o) for o in only]
        missing = set(names) - set(out)
        if missing:
            raise ValueError(f"unknown variants {sorted(missing)} for grid {grid!r}")
        out = {k: v for k, v in out.items() if k in names}
    return out


ABLATION_COLUMNS = (("raw", "b_acc"), ("raw", "f1"), ("crf", "b_acc"), ("crf", "f1"))


@dataclass
class AblationTable:
    grid: str
    level: str
    seeds: list[int]
    # variant -> column -> per-seed values
    values: dict[str, dict[str, list[Optional[float]]]]

    def mean(self, variant: str, column: str) -> Optional[float]:
        vals = [v for v in self.values[variant][column] if v is not None]
        return float(np.mean(vals)) if vals else None

    def spread(self, variant: str, column: str) -> Optional[tuple[float, float]]:
        vals = [v for v in self.values[variant][column] if v is not None]
        return (min(vals), max(vals)) if vals else None

    def rows(self) -> list[dict]:
        out = []
        for variant, cols in self.values.items():
            row = {"variant": variant}
            for col in cols:
                m, sp = self.mean(variant, col), self.spread(variant, col)
                row[f"{col}_mean"] = m
                row[f"{col}_min"], row[f"{col}_max"] = sp if sp else (None, None)
            out.append(row)
        return out

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        rows = self.rows()
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        return path

    def render(self) -> str:
        """Aligned text table: b-Accuracy and F1 without and with compression."""
        head = f"{'variant':<18}|{'raw b-acc':>19}{'raw F1':>19} |{'crf b-acc':>19}{'crf F1':>19}"
        lines = [f"{self.grid} ablation ({self.level}-level, seeds {self.seeds})", head, "-" * len(head)]
        for variant in self.values:
            cells = []
            for col in ("raw_b_acc", "raw_f1", "crf_b_acc", "crf_f1"):
                m, sp = self.mean(variant, col), self.spread(variant, col)
                cells.append(f"{m:.3f} [{sp[0]:.2f},{sp[1]:.2f}]" if m is not None else "n/a")
            lines.append(f"{variant:<18}|{cells[0]:>19}{cells[1]:>19} |{cells[2]:>19}{cells[3]:>19}")
        return "\n".join(lines)


def _table_cells(report: DetectionReport, level: str) -> dict[str, Optional[float]]:
    return {
        f"{regime}_{name}": report.metric(regime, metric, level)
        for regime in (RAW, COMPRESSED)
        for name, metric in (("b_acc", "balanced_accuracy"), ("f1", "f1"))
    }


def run_ablation(
    grid: str,
    base_config: TrainConfig,
    manifest: DatasetManifest,
    seeds: tuple[int, ...] = (0, 1, 2),
    split: str = "test",
    level: str = "window",
    out_dir: str | Path | None = None,
    only: list[str] | None = None,
    store: FrameStore | None = None,
    cache: dict | None = None,
) -> AblationTable:
    """Train every variant of ``grid`` for each seed and tabulate test metrics.

    ``level`` picks frame-window metrics (``"window"``) or video verdicts
    (``"video"``) for the table cells. ``cache`` maps a run's config digest to
    its test report; passing the same dict to several grids trains a config
    that appears in more than one of them (e.g. the full loss with cutout)
    only once.
    """
    if not manifest.select(split=split):
        raise EmptyInputError(f"split {split!r} is empty")
    variants = grid_variants(grid, base_config, only)
    store = store or FrameStore(manifest)
    cache = {} if cache is None else cache
    values: dict[str, dict[str, list]] = {}
    for name, cfg in variants.items():
        cols: dict[str, list] = {f"{r}_{m}": [] for r, m in ABLATION_COLUMNS}
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed)
            key = (run_cfg.digest(), manifest.digest(), split)
            report = cache.get(key)
            if report is None:
                run_dir = Path(out_dir) / f"{_slug(name)}_seed{seed}" if out_dir is not None else None
                result = train(run_cfg, manifest, run_dir, store)
                report = evaluate_corpus(
                    result.params, manifest, split, 1, run_cfg.p_threshold,
                    run_cfg.frac_threshold, tiled=run_cfg.test_tiled, store=store,
                )
                cache[key] = report
            for col, v in _table_cells(report, level).items():
                cols[col].append(v)
            log.info("ablation %s/%s seed %d: %s", grid, name, seed, _table_cells(report, level))
        values[name] = cols
    table = AblationTable(grid, level, list(seeds), values)
    if out_dir is not None:
        table.write_csv(Path(out_dir) / f"ablation_{grid}.csv")
        (Path(out_dir) / f"ablation_{grid}.txt").write_text(table.render() + "\n")
    return table


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower())
