"""Command line entry point: ``srdetect {forge,train,ablate,detect,eval}``.

Exit codes: 0 when the command ran, 2 for invalid input, 3 for an unreadable
or corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import CheckpointError, DivergedTrainingError

EXIT_OK, EXIT_INVALID, EXIT_CHECKPOINT = 0, 2, 3

log = logging.getLogger("srdetect")


def _q_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _external(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"--external expects NAME=DIR, got {item!r}")
        out[name] = path
    return out


def cmd_forge(args) -> int:
    from .media_forge import ForgeConfig, forge_dataset

    cfg = ForgeConfig(
        scale=args.scale,
        down=args.down,
        upscalers=args.upscalers,
        external_upscalers=_external(args.external),
        q_range=args.q_range,
    )
    manifest = forge_dataset(args.src, args.out, cfg, seed=args.seed, workers=args.workers)
    print(f"forged {len(manifest.entries)} clips into {args.out} ({len(manifest.errors)} sources skipped)")
    for err in manifest.errors:
        print(f"skipped {err.get('clip_id')}: {err.get('error')}", file=sys.stderr)
    return EXIT_OK


def _load_config(path, desk: bool = False):
    """Config file fields override the chosen base (spec defaults or the desk preset)."""
    from .trainer import TrainConfig, desk_config

    fields = json.loads(Path(path).read_text()) if path else {}
    return desk_config(**fields) if desk else TrainConfig.from_dict(fields)


def cmd_train(args) -> int:
    from .media_forge import DatasetManifest
    from .trainer import train

    cfg = _load_config(args.config, args.desk)
    if args.deterministic:
        cfg = replace(cfg, deterministic=True)
    result = train(cfg, DatasetManifest.load(args.manifest), args.out)
    best = result.val_history[result.best_epoch] if result.val_history else {}
    print(
        f"trained {len(result.log)} steps in {result.wall_clock:.1f}s; best epoch {result.best_epoch}"
        + (f" (val video b-acc {best['video_b_acc']:.3f})" if best else "")
    )
    print(f"checkpoints and train_log.csv written to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .media_forge import DatasetManifest
    from .trainer import run_ablation

    cfg = _load_config(args.config, args.desk)
    only = list(args.aug) if args.aug else None
    if only and args.grid != "aug":
        raise ValueError("--aug only applies to --grid aug")
    table = run_ablation(
        args.grid,
        cfg,
        DatasetManifest.load(args.manifest),
        seeds=tuple(range(args.seeds)),
        split=args.split,
        level=args.level,
        out_dir=args.out,
        only=only,
    )
    print(table.render())
    return EXIT_OK


def _video_dirs(root: Path) -> list[Path]:
    if any(root.glob("*.png")):
        return [root]
    dirs = sorted(d for d in root.iterdir() if d.is_dir() and any(d.glob("*.png")))
    if not dirs:
        raise ValueError(f"{root} holds no PNG frames and no clip subdirectories with frames")
    return dirs


def cmd_detect(args) -> int:
    from .detector import build_report, detect_video
    from .media_forge.frames import read_frames
    from .network import load_checkpoint

    params = load_checkpoint(args.ckpt)
    root = Path(args.video)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    videos = []
    for d in _video_dirs(root):
        v = detect_video(
            params, read_frames(d), args.stride, args.p_threshold, args.frac,
            tiled=args.tiled, clip_id=d.name,
        )
        videos.append(v)
        print(f"{d.name}\t{v.verdict}\tfraction={v.fraction:.4f}\twindows={len(v.probabilities)}")
    settings = {"pair_stride": args.stride, "p_threshold": args.p_threshold, "frac_threshold": args.frac, "tiled": args.tiled}
    report = build_report(videos, "detect", settings, args.p_threshold, params.config.digest(), params.digest())
    if args.report:
        Path(args.report).write_text(report.to_json())
    else:
        print(report.to_json(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .detector import evaluate_corpus
    from .media_forge import DatasetManifest
    from .network import load_checkpoint

    params = load_checkpoint(args.ckpt)
    report = evaluate_corpus(
        params, DatasetManifest.load(args.manifest), args.split, args.stride,
        args.p_threshold, args.frac, tiled=args.tiled,
    )
    print(report.render())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = report.csv_rows()
        with (out / f"eval_{args.split}.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        (out / f"eval_{args.split}.txt").write_text(report.render() + "\n")
        (out / f"eval_{args.split}.json").write_text(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .media_forge.resample import KERNELS

    p = argparse.ArgumentParser(prog="srdetect", description="Forge, train and run an upscaled-video detector.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forge", help="build real/fake clip corpora and a manifest from source frames")
    f.add_argument("--src", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--scale", type=int, default=2)
    f.add_argument("--down", default="bicubic", choices=KERNELS)
    f.add_argument("--upscalers", type=_csv_list, default=("bilinear", "bicubic"))
    f.add_argument("--external", action="append", metavar="NAME=DIR", help="frames upscaled by an outside tool")
    f.add_argument("--q-range", type=_q_range, default=(15, 30))
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--workers", type=int, default=1)
    f.set_defaults(func=cmd_forge)

    t = sub.add_parser("train", help="train a detector on a forged manifest")
    t.add_argument("--config", help="JSON training config (defaults apply when omitted)")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--desk", action="store_true", help="start from the single-core desk preset")
    t.add_argument("--deterministic", action="store_true", help="single thread, fixed reduction order")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train and compare loss, augmentation or frame-count variants")
    a.add_argument("--grid", required=True, choices=("aug", "loss", "frames"))
    a.add_argument("--config")
    a.add_argument("--desk", action="store_true", help="start from the single-core desk preset")
    a.add_argument("--manifest", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--aug", type=_csv_list, help="subset of none,blur,jpeg,noise,cutout")
    a.add_argument("--split", default="test")
    a.add_argument("--level", default="window", choices=("window", "video"))
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    for name, helptext in (("detect", "score clips and apply the frame-fraction rule"), ("eval", "stratified metrics on a manifest split")):
        d = sub.add_parser(name, help=helptext)
        d.add_argument("--ckpt", required=True)
        d.add_argument("--stride", type=int, default=1)
        d.add_argument("--frac", type=float, default=0.05)
        d.add_argument("--p-threshold", type=float, default=0.5)
        d.add_argument("--tiled", action="store_true", help="average probabilities over a tile grid")
        if name == "detect":
            d.add_argument("--video", required=True, help="a frame directory, or a directory of them")
            d.add_argument("--report", help="write the JSON report here instead of stdout")
            d.set_defaults(func=cmd_detect)
        else:
            d.add_argument("--manifest", required=True)
            d.add_argument("--split", default="test")
            d.add_argument("--out", help="directory for CSV, text and JSON outputs")
            d.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergedTrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
