"""Square hole masks and the mask algebra shared by training and inference.

Convention: a mask grid holds 1 where pixels are to be synthesized by the
completion network and 0 where the image is kept.  The complement ``1 - M``
marks what the extrapolation network has to synthesize.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np
import torch
from PIL import Image


class MaskGeometryError(ValueError):
    """No square with a zero border fits the requested area range."""


class ShapeMismatchError(ValueError):
    """Spatial shapes of an image and a mask (or two images) disagree."""


@dataclass(frozen=True)
class MaskSpec:
    min_fraction: float = 0.25
    max_fraction: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.min_fraction <= self.max_fraction < 1:
            raise ValueError(
                f"need 0 < min_fraction <= max_fraction < 1, got "
                f"[{self.min_fraction}, {self.max_fraction}]"
            )


@dataclass(frozen=True, eq=False)
class Mask:
    grid: np.ndarray
    top: int
    left: int
    side: int
    seed: int | None = field(default=None)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def fraction(self) -> float:
        return self.side * self.side / (self.height * self.width)

    def record(self) -> dict:
        return {
            "top": self.top,
            "left": self.left,
            "side": self.side,
            "H": self.height,
            "W": self.width,
            "seed": self.seed,
        }

    @classmethod
    def square(cls, height: int, width: int, top: int, left: int, side: int, seed=None) -> "Mask":
        if side < 1 or top < 1 or left < 1 or top + side > height - 1 or left + side > width - 1:
            raise MaskGeometryError(
                f"square (top={top}, left={left}, side={side}) does not leave a 1-px "
                f"zero border in a {height}x{width} grid"
            )
        grid = np.zeros((height, width), dtype=np.uint8)
        grid[top : top + side, left : left + side] = 1
        grid.setflags(write=False)
        return cls(grid, top, left, side, seed)

    @classmethod
    def from_grid(cls, grid: np.ndarray, seed=None) -> "Mask":
        """Recover the square descriptor from a binary grid, validating every invariant."""
        grid = np.asarray(grid)
        if grid.ndim != 2:
            raise MaskGeometryError(f"mask grid must be 2-D, got shape {grid.shape}")
        if not np.isin(grid, (0, 1)).all():
            raise MaskGeometryError("mask grid must contain only 0 and 1")
        rows = np.flatnonzero(grid.any(axis=1))
        cols = np.flatnonzero(grid.any(axis=0))
        if rows.size == 0:
            raise MaskGeometryError("mask grid has no ones")
        top, left = int(rows[0]), int(cols[0])
        h, w = int(rows[-1]) - top + 1, int(cols[-1]) - left + 1
        if h != w or int(grid.sum()) != h * w:
            raise MaskGeometryError("ones of the mask grid do not form a single square")
        return cls.square(grid.shape[0], grid.shape[1], top, left, h, seed)


MaskLike = Union[Mask, np.ndarray, torch.Tensor]


def feasible_sides(spec: MaskSpec, height: int, width: int) -> list[int]:
    area = height * width
    limit = min(height, width) - 2
    return [
        s for s in range(1, limit + 1) if spec.min_fraction <= s * s / area <= spec.max_fraction
    ]


def sample_mask(spec: MaskSpec, height: int, width: int, rng: np.random.Generator) -> Mask:
    """Draw one square mask whose area fraction lies in ``spec``'s range."""
    sides = feasible_sides(spec, height, width)
    if not sides:
        largest = min(height, width) - 2
        if largest < 1:
            reason = f"a {height}x{width} grid leaves no room for a square inside a 1-px border"
        else:
            reason = (
                f"area fraction: no side in 1..{largest} gives side^2/{height * width} in "
                f"[{spec.min_fraction}, {spec.max_fraction}] with a 1-px border"
            )
        raise MaskGeometryError(reason)
    fraction = rng.uniform(spec.min_fraction, spec.max_fraction)
    target = int(math.floor(math.sqrt(fraction * height * width) + 0.5))
    # nearest feasible side; ties go to the smaller one
    side = min(sides, key=lambda s: (abs(s - target), s))
    top = int(rng.integers(1, height - side))
    left = int(rng.integers(1, width - side))
    return Mask.square(height, width, top, left, side, spec.seed)


def mask_stream(spec: MaskSpec, height: int, width: int) -> Iterator[Mask]:
    rng = np.random.default_rng(spec.seed)
    while True:
        yield sample_mask(spec, height, width, rng)


def region_tensor(m: MaskLike, like: torch.Tensor) -> torch.Tensor:
    """Mask as a tensor broadcastable against ``like`` (N, C, H, W)."""
    if isinstance(m, Mask):
        m = m.grid
    t = m if isinstance(m, torch.Tensor) else torch.tensor(np.asarray(m))
    t = t.to(dtype=like.dtype, device=like.device)
    if t.dim() == 2:
        t = t[None, None]
    elif t.dim() == 3:
        t = t[:, None]
    if t.dim() != 4 or t.shape[1] != 1:
        raise ShapeMismatchError(f"mask must be (H, W), (N, H, W) or (N, 1, H, W), got {tuple(t.shape)}")
    if t.shape[-2:] != like.shape[-2:]:
        raise ShapeMismatchError(
            f"mask is {tuple(t.shape[-2:])} but image is {tuple(like.shape[-2:])}"
        )
    if t.shape[0] not in (1, like.shape[0]):
        raise ShapeMismatchError(f"mask batch {t.shape[0]} vs image batch {like.shape[0]}")
    return t


def complement(m: MaskLike):
    """``1 - M``, returned in the same container kind as the argument."""
    if isinstance(m, Mask):
        return (1 - m.grid).astype(np.uint8)
    return 1 - m


def inside_masked(x: torch.Tensor, m: MaskLike) -> torch.Tensor:
    """(1 - M) * x: the hole is zeroed, the surroundings kept."""
    return (1 - region_tensor(m, x)) * x


def outside_masked(x: torch.Tensor, m: MaskLike) -> torch.Tensor:
    """M * x: only the hole content is kept."""
    return region_tensor(m, x) * x


def concat_mask_channel(masked: torch.Tensor, region: MaskLike) -> torch.Tensor:
    r = region_tensor(region, masked)
    return torch.cat([masked, r.expand(masked.shape[0], 1, *masked.shape[-2:])], dim=1)


def restore_known(output: torch.Tensor, input: torch.Tensor, known: MaskLike) -> torch.Tensor:
    """Paste the known input pixels over a network output."""
    if output.shape != input.shape:
        raise ShapeMismatchError(f"output {tuple(output.shape)} vs input {tuple(input.shape)}")
    k = region_tensor(known, input)
    return torch.where(k > 0.5, input, output)


def save_mask(mask: Mask, png_path: str | Path, sidecar: str | Path | None = None) -> None:
    """Write the grid as a 1-bit PNG and append its descriptor to a JSON-lines sidecar."""
    png_path = Path(png_path)
    Image.fromarray(mask.grid.astype(bool)).convert("1").save(png_path)
    if sidecar is not None:
        with open(sidecar, "a") as fh:
            fh.write(json.dumps({"file": png_path.name, **mask.record()}) + "\n")


def read_mask_grid(png_path: str | Path) -> np.ndarray:
    """Binary grid of a mask PNG (white = 1) without checking its shape."""
    with Image.open(png_path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def load_mask(png_path: str | Path) -> Mask:
    return Mask.from_grid(read_mask_grid(png_path))
