"""Command line entry point: ``cyclepaint <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ConfigError, load_config
from .data import DatasetError, DatasetHandle, load_image, resolve_dataset, to_pixels
from .evaluation import evaluate, grid_rows, image_mask, render_grid, run_inpaint, run_outpaint
from .losses import NonFiniteLossError
from .masking import MaskGeometryError, MaskSpec, ShapeMismatchError, mask_stream, read_mask_grid, save_mask
from .training import CheckpointError, load_checkpoint, train

log = logging.getLogger("cyclepaint")

# checked in order; the first matching class names the error category
ERROR_CATEGORIES = [
    (ShapeMismatchError, "shape-mismatch"),
    (MaskGeometryError, "geometry"),
    (CheckpointError, "checkpoint"),
    (ConfigError, "config"),
    (DatasetError, "data"),
    (NonFiniteLossError, "non-finite"),
    (OSError, "io"),
    (ValueError, "invalid-argument"),
]


def _add_mask_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-fraction", type=float, default=0.25)
    p.add_argument("--max-fraction", type=float, default=0.35)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="synth:checkers:64",
                   help="image folder or synth:<kind>:<n> (kinds: gradients, checkers, blobs)")
    p.add_argument("--split-ratio", type=float, default=0.8, help="fraction of images used for training")
    p.add_argument("--data-seed", type=int, default=0, help="seed for synthesis and the train/test split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclepaint", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train C, E and D jointly")
    p.add_argument("--config", help="JSON config file (keys mirror TrainingConfig)")
    p.add_argument("--override", action="extend", nargs="+", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="run")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_data_args(p)

    for name, helptext in (("complete", "fill the masked interior"), ("extrapolate", "fill around the kept interior")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--mask", help="binary PNG mask (white = hole); sampled when omitted")
        p.add_argument("--mask-seed", type=int, default=0)
        _add_mask_args(p)
        p.add_argument("--out", required=True, help="restored output PNG")
        p.add_argument("--raw-out", help="network output before restoration")

    p = sub.add_parser("evaluate", help="PSNR of restored inpainting and outpainting")
    p.add_argument("--ckpt", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    _add_mask_args(p)
    p.add_argument("--out", help="JSON-lines report (stdout when omitted)")

    p = sub.add_parser("make-masks", help="sample square masks to PNG + masks.jsonl")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    _add_mask_args(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("render", help="comparison grid: masked input, raw, restored, ground truth")
    p.add_argument("--ckpt", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--direction", choices=("inpaint", "outpaint"), default="inpaint")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    _add_mask_args(p)
    p.add_argument("--gutter", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _dataset(args, resolution: int, split: str):
    train_set, test_set = resolve_dataset(args.data, resolution, args.split_ratio, args.data_seed)
    if split == "all":
        handles = [h for h in (train_set, test_set) if h is not None]
        return DatasetHandle(handles[0].root, resolution, "all",
                             np.concatenate([h.images for h in handles]),
                             tuple(s for h in handles for s in h.source_ids))
    handle = train_set if split == "train" else test_set
    if handle is None:
        raise DatasetError(f"the {split} split of {args.data} is empty (split ratio {args.split_ratio})")
    return handle


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    train_set, _ = resolve_dataset(args.data, cfg.resolution, args.split_ratio, args.data_seed)
    final = train(cfg, train_set, args.out_dir, resume_from=args.resume)
    print(final)
    return 0


def cmd_infer(args) -> int:
    bundle, _, cfg = load_checkpoint(args.ckpt)
    x = torch.from_numpy(load_image(args.image, cfg.resolution))[None]
    if args.mask:
        M = read_mask_grid(args.mask)
    else:
        M = image_mask(MaskSpec(args.min_fraction, args.max_fraction, args.mask_seed),
                       cfg.resolution, args.mask_seed, Path(args.image).name)
    run = run_inpaint if args.command == "complete" else run_outpaint
    raw, restored = run(bundle, x, M)
    Image.fromarray(to_pixels(restored[0]).transpose(1, 2, 0)).save(args.out)
    if args.raw_out:
        Image.fromarray(to_pixels(raw[0]).transpose(1, 2, 0)).save(args.raw_out)
    return 0


def cmd_evaluate(args) -> int:
    bundle, _, cfg = load_checkpoint(args.ckpt)
    handle = _dataset(args, cfg.resolution, args.split)
    spec = MaskSpec(args.min_fraction, args.max_fraction, args.seed)
    text = evaluate(bundle, handle, spec, args.seed).to_jsonl()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_make_masks(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = out / "masks.jsonl"
    sidecar.write_text("")
    stream = mask_stream(MaskSpec(args.min_fraction, args.max_fraction, args.seed), args.height, args.width)
    for i in range(args.n):
        save_mask(next(stream), out / f"mask_{i:04d}.png", sidecar)
    return 0


def cmd_render(args) -> int:
    bundle, _, cfg = load_checkpoint(args.ckpt)
    handle = _dataset(args, cfg.resolution, args.split)
    n = min(args.rows, handle.count)
    batch = handle.batch(list(range(n)))
    spec = MaskSpec(args.min_fraction, args.max_fraction, args.seed)
    M = torch.from_numpy(np.stack([image_mask(spec, cfg.resolution, args.seed, s).grid
                                   for s in batch.source_ids]))[:, None]
    render_grid(grid_rows(bundle, batch.data, M, args.direction), args.out, args.gutter)
    return 0


COMMANDS = {
    "train": cmd_train,
    "complete": cmd_infer,
    "extrapolate": cmd_infer,
    "evaluate": cmd_evaluate,
    "make-masks": cmd_make_masks,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to a one-line error category
        for kind, category in ERROR_CATEGORIES:
            if isinstance(exc, kind):
                break
        else:
            category = "internal"
        message = " ".join(str(exc).split())
        print(f"error: {category}: {message}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
