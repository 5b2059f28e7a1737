"""Image folders, procedural toy datasets, splits and batching."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
TOY_KINDS = ("gradients", "checkers", "blobs")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ImageBatch:
    data: torch.Tensor
    source_ids: list[str]

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    """Immutable in-memory image set; ``images`` is (count, 3, R, R) float32 in [-1, 1]."""

    root: str
    resolution: int
    split: str
    images: np.ndarray
    source_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.source_ids) < 1 or self.images.shape[0] != len(self.source_ids):
            raise DatasetError("a dataset needs at least one image and one id per image")
        self.images.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.source_ids)

    def batch(self, indices) -> ImageBatch:
        idx = np.asarray(indices, dtype=np.int64)
        return ImageBatch(torch.from_numpy(self.images[idx].copy()), [self.source_ids[i] for i in idx])


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit values linearly onto [-1, 1]."""
    return pixels.astype(np.float32) * (2.0 / 255.0) - 1.0


def to_pixels(values) -> np.ndarray:
    """Inverse of :func:`to_unit_range`, rounded and clipped to uint8."""
    v = values.detach().cpu().numpy() if isinstance(values, torch.Tensor) else np.asarray(values)
    return np.clip(np.rint((v.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load_image(path: str | Path, resolution: int) -> np.ndarray:
    """Center-crop to a square, resize, return (3, R, R) float32 in [-1, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        im = im.crop((left, top, left + s, top + s))
        if s != resolution:
            im = im.resize((resolution, resolution), Image.BICUBIC)
        arr = np.asarray(im)
    return to_unit_range(arr).transpose(2, 0, 1).copy()


def split_indices(count: int, split_ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < split_ratio <= 1:
        raise DatasetError(f"split_ratio must be in (0, 1], got {split_ratio}")
    order = np.random.default_rng(seed).permutation(count)
    n_train = min(count, max(1, int(round(count * split_ratio))))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_dataset(handle: DatasetHandle, split_ratio: float, seed: int) -> tuple[DatasetHandle, DatasetHandle | None]:
    tr, te = split_indices(handle.count, split_ratio, seed)

    def sub(idx, name):
        if idx.size == 0:
            return None
        return DatasetHandle(handle.root, handle.resolution, name, handle.images[idx],
                             tuple(handle.source_ids[i] for i in idx))

    return sub(tr, "train"), sub(te, "test")


def load_folder(root: str | Path, resolution: int = 64, split_ratio: float = 0.8, seed: int = 0):
    root = Path(root)
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    images, ids = [], []
    for p in paths:
        try:
            images.append(load_image(p, resolution))
        except Exception as exc:  # noqa: BLE001 - any decode failure is skipped
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        ids.append(str(p.relative_to(root)))
    if not images:
        raise DatasetError(f"no usable images under {root}")
    full = DatasetHandle(str(root), resolution, "all", np.stack(images), tuple(ids))
    return split_dataset(full, split_ratio, seed)


def _random_color(rng, k=1):
    return rng.uniform(-1.0, 1.0, size=(k, 3)).astype(np.float32)


def _checkers(rng, res, yy, xx):
    period = rng.uniform(res / 8, res / 3)
    angle = rng.uniform(0, np.pi / 2)
    phase = rng.uniform(0, 2 * period, size=2)
    u = np.cos(angle) * xx + np.sin(angle) * yy + phase[0]
    v = -np.sin(angle) * xx + np.cos(angle) * yy + phase[1]
    cell = (np.floor(u / period) + np.floor(v / period)) % 2
    a, b = _random_color(rng, 2)
    while np.abs(a - b).max() < 0.5:
        a, b = _random_color(rng, 2)
    return np.where(cell[None] > 0, a[:, None, None], b[:, None, None])


def _gradients(rng, res, yy, xx):
    angle = rng.uniform(0, 2 * np.pi)
    t = (np.cos(angle) * (xx - res / 2) + np.sin(angle) * (yy - res / 2)) / (res / np.sqrt(2)) + 0.5
    t = np.clip(t, 0, 1)[None]
    a, b = _random_color(rng, 2)
    return a[:, None, None] * (1 - t) + b[:, None, None] * t


def _blobs(rng, res, yy, xx):
    img = np.broadcast_to(_random_color(rng)[0][:, None, None], (3, res, res)).copy()
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, res, size=2)
        sigma = rng.uniform(res / 10, res / 4)
        weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))[None]
        img = img * (1 - weight) + _random_color(rng)[0][:, None, None] * weight
    return img


_GENERATORS = {"checkers": _checkers, "gradients": _gradients, "blobs": _blobs}


def synth_toy_dataset(kind: str, n: int, resolution: int = 64, seed: int = 0) -> DatasetHandle:
    """Procedural images with global structure, reproducible per ``seed``."""
    if kind not in _GENERATORS:
        raise DatasetError(f"unknown toy dataset kind {kind!r}; expected one of {TOY_KINDS}")
    if n < 2:
        raise DatasetError(f"toy datasets need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    make = _GENERATORS[kind]
    images = np.stack([np.clip(make(rng, resolution, yy, xx), -1, 1) for _ in range(n)]).astype(np.float32)
    ids = tuple(f"{kind}-{seed}-{i:05d}" for i in range(n))
    return DatasetHandle(f"synth:{kind}:{n}", resolution, "all", images, ids)


def resolve_dataset(spec: str, resolution: int, split_ratio: float = 0.8, seed: int = 0):
    """``synth:<kind>:<n>`` or a folder path -> (train, test) handles."""
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise DatasetError(f"synthetic dataset spec must be synth:<kind>:<n>, got {spec!r}")
        try:
            n = int(parts[2])
        except ValueError:
            raise DatasetError(f"bad image count in {spec!r}") from None
        full = synth_toy_dataset(parts[1], n, resolution, seed)
        return split_dataset(full, split_ratio, seed)
    return load_folder(spec, resolution, split_ratio, seed)


def epoch_order(count: int, shuffle_seed: int) -> np.ndarray:
    return np.random.default_rng(shuffle_seed).permutation(count)


def batches(handle: DatasetHandle, batch_size: int, shuffle_seed: int) -> Iterator[ImageBatch]:
    """One epoch over ``handle`` in a seeded order; the last batch may be short."""
    if batch_size < 1:
        raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > handle.count:
        log.warning("batch_size %d exceeds dataset size %d; emitting one short batch",
                    batch_size, handle.count)
    order = epoch_order(handle.count, shuffle_seed)
    for start in range(0, handle.count, batch_size):
        yield handle.batch(order[start : start + batch_size])


def batches_per_epoch(count: int, batch_size: int) -> int:
    return math.ceil(count / batch_size)
