"""Inference with restoration, PSNR scoring and comparison grids."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import DatasetHandle, to_pixels
from .masking import (
    Mask,
    MaskSpec,
    ShapeMismatchError,
    complement,
    concat_mask_channel,
    inside_masked,
    outside_masked,
    restore_known,
    sample_mask,
)

PSNR_CAP = 100.0


def psnr(a: torch.Tensor | np.ndarray, b: torch.Tensor | np.ndarray) -> float:
    """PSNR in dB of two images in [-1, 1], computed after mapping to [0, 1]."""
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr of {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = (((a + 1) / 2 - (b + 1) / 2) ** 2).mean().item()
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _check_resolution(generator, x: torch.Tensor) -> None:
    r = generator.cfg.resolution
    if tuple(x.shape[-2:]) != (r, r):
        raise ShapeMismatchError(f"images are {tuple(x.shape[-2:])}, model resolution is {r}x{r}")


@torch.no_grad()
def run_inpaint(bundle, x: torch.Tensor, M) -> tuple[torch.Tensor, torch.Tensor]:
    _check_resolution(bundle.C, x)
    raw = bundle.C(concat_mask_channel(inside_masked(x, M), M))
    return raw, restore_known(raw, x, complement(M))


@torch.no_grad()
def run_outpaint(bundle, x: torch.Tensor, M) -> tuple[torch.Tensor, torch.Tensor]:
    _check_resolution(bundle.E, x)
    raw = bundle.E(concat_mask_channel(outside_masked(x, M), complement(M)))
    return raw, restore_known(raw, x, M)


@dataclass
class MetricsReport:
    per_image: list[tuple[str, str, float]] = field(default_factory=list)
    mask_seed: int = 0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p for _, _, p in self.per_image]))

    def mean_for(self, direction: str) -> float:
        return float(np.mean([p for _, d, p in self.per_image if d == direction]))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"source_id": s, "direction": d, "psnr": p}) for s, d, p in self.per_image]
        lines.append(json.dumps({
            "summary": True,
            "count": len(self.per_image),
            "mean_psnr": self.mean_psnr,
            "mean_inpaint": self.mean_for("inpaint"),
            "mean_outpaint": self.mean_for("outpaint"),
            "mask_seed": self.mask_seed,
        }))
        return "\n".join(lines) + "\n"


def image_mask(spec: MaskSpec, resolution: int, seed: int, source_id: str) -> Mask:
    """Mask for one test image, derived from (seed, source_id) only."""
    digest = hashlib.sha256(f"{seed}:{source_id}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return sample_mask(spec, resolution, resolution, rng)


def evaluate(bundle, testset: DatasetHandle, spec: MaskSpec = MaskSpec(), seed: int = 0,
             batch_size: int = 16) -> MetricsReport:
    """Score restored inpainting and outpainting outputs of every test image."""
    if testset is None or testset.count == 0:
        raise ValueError("evaluation needs a non-empty test set")
    report = MetricsReport(mask_seed=seed)
    for start in range(0, testset.count, batch_size):
        idx = range(start, min(start + batch_size, testset.count))
        batch = testset.batch(list(idx))
        masks = np.stack([image_mask(spec, testset.resolution, seed, s).grid for s in batch.source_ids])
        M = torch.from_numpy(masks)[:, None]
        _, inpainted = run_inpaint(bundle, batch.data, M)
        _, outpainted = run_outpaint(bundle, batch.data, M)
        for i, sid in enumerate(batch.source_ids):
            report.per_image.append((sid, "inpaint", psnr(inpainted[i], batch.data[i])))
            report.per_image.append((sid, "outpaint", psnr(outpainted[i], batch.data[i])))
    return report


def render_grid(rows, path: str | Path, gutter: int = 0) -> Path:
    """Write a PNG with one row per (masked input, raw, restored, ground truth)."""
    rows = [list(r) for r in rows]
    if not rows:
        raise ValueError("render_grid needs at least one row")
    tiles = [[to_pixels(t).transpose(1, 2, 0) for t in row] for row in rows]
    shape = tiles[0][0].shape
    for row in tiles:
        if len(row) != 4:
            raise ValueError(f"each row needs 4 images, got {len(row)}")
        for t in row:
            if t.shape != shape:
                raise ShapeMismatchError(f"tile {t.shape[:2]} differs from {shape[:2]}")
    h, w = shape[:2]
    canvas = np.full((len(rows) * h + (len(rows) - 1) * gutter, 4 * w + 3 * gutter, 3), 255, np.uint8)
    for r, row in enumerate(tiles):
        for c, t in enumerate(row):
            y, x = r * (h + gutter), c * (w + gutter)
            canvas[y : y + h, x : x + w] = t
    path = Path(path)
    Image.fromarray(canvas).save(path)
    return path


def grid_rows(bundle, images: torch.Tensor, masks, direction: str):
    """Rows for :func:`render_grid` in the order masked input, raw, restored, ground truth."""
    M = masks
    if direction == "inpaint":
        raw, restored = run_inpaint(bundle, images, M)
        masked = inside_masked(images, M)
    elif direction == "outpaint":
        raw, restored = run_outpaint(bundle, images, M)
        masked = outside_masked(images, M)
    else:
        raise ValueError(f"direction must be inpaint or outpaint, got {direction!r}")
    return [(masked[i], raw[i], restored[i], images[i]) for i in range(images.shape[0])]
