"""Square-patch partitioning of images at nested resolution levels.

An image is partitioned into `patch_side` x `patch_side` cells; border cells
are clipped to the image bounds rather than padded, so every pixel belongs to
exactly one patch and pixel geometry stays exact for rasters and oracles.
Refining a level halves the patch side (integer division) and re-partitions
the whole image, which for even sides nests each parent into at most four
children; odd sides still cover every parent pixel but children may straddle
parent boundaries (see `children`).

All operations are pure functions of their arguments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, Mapping, NamedTuple, Set

import numpy as np
from PIL import Image


class RefinementExhausted(Exception):
    """Raised when a 1-pixel grid is asked to refine further."""


@dataclass(frozen=True)
class ImageRef:
    """Identity and dimensions of an image under annotation."""

    id: str
    width: int
    height: int
    source: str = ""

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")


class PatchId(NamedTuple):
    level: int
    row: int
    col: int


class PixelRect(NamedTuple):
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class GridLevel:
    """One resolution level of the partition.

    Carries the image dimensions so that every grid operation, refinement
    included, is a function of the grid value alone.
    """

    level: int
    patch_side: int
    rows: int
    cols: int
    width: int
    height: int

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


def partition(width: int, height: int, base_patch_side: int) -> GridLevel:
    """Build the level-0 grid for an image.

    Rows and columns are `ceil(dim / side)`; border patches are clipped.
    """
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be >= 1, got {width}x{height}")
    if base_patch_side < 1:
        raise ValueError(f"patch side must be >= 1, got {base_patch_side}")
    if base_patch_side > max(width, height):
        raise ValueError(
            f"patch side {base_patch_side} exceeds both image dimensions {width}x{height}"
        )
    return GridLevel(
        level=0,
        patch_side=base_patch_side,
        rows=-(-height // base_patch_side),
        cols=-(-width // base_patch_side),
        width=width,
        height=height,
    )


def refine(grid: GridLevel) -> GridLevel:
    """Next finer level: patch side halved by integer division.

    Raises RefinementExhausted at side 1, the pixel-granularity floor.
    """
    if grid.patch_side < 2:
        raise RefinementExhausted("patch side is already 1 pixel")
    side = grid.patch_side // 2
    return GridLevel(
        level=grid.level + 1,
        patch_side=side,
        rows=-(-grid.height // side),
        cols=-(-grid.width // side),
        width=grid.width,
        height=grid.height,
    )


def level_grid(width: int, height: int, base_patch_side: int, level: int) -> GridLevel:
    """Grid at an arbitrary level, by repeated refinement from level 0."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    grid = partition(width, height, base_patch_side)
    for _ in range(level):
        grid = refine(grid)
    return grid


def patch_ids(grid: GridLevel) -> Iterator[PatchId]:
    """All patch ids of a grid in row-major order."""
    for row in range(grid.rows):
        for col in range(grid.cols):
            yield PatchId(grid.level, row, col)


def _check_id(grid: GridLevel, pid: PatchId) -> None:
    if pid.level != grid.level:
        raise ValueError(f"patch {pid} does not belong to level {grid.level}")
    if not (0 <= pid.row < grid.rows and 0 <= pid.col < grid.cols):
        raise ValueError(f"patch {pid} out of range for {grid.rows}x{grid.cols} grid")


def patch_rect(grid: GridLevel, pid: PatchId) -> PixelRect:
    """Pixel rectangle of a patch; border patches are clipped to the image."""
    _check_id(grid, pid)
    s = grid.patch_side
    x = pid.col * s
    y = pid.row * s
    return PixelRect(x, y, min(s, grid.width - x), min(s, grid.height - y))


def children(parent: PatchId, parent_grid: GridLevel, child_grid: GridLevel) -> Set[PatchId]:
    """Child-level patches whose rects intersect the parent rect.

    For even parent sides this is the usual <=4 quadtree children; for odd
    sides a child can straddle two parents and belong to both children sets.
    Either way the union of children rects covers the parent rect, so no
    parent pixel is ever dropped by refinement.
    """
    if child_grid != refine(parent_grid):
        raise ValueError("child grid is not the refinement of the parent grid")
    rect = patch_rect(parent_grid, parent)
    s = child_grid.patch_side
    c0, c1 = rect.x // s, (rect.x + rect.w - 1) // s
    r0, r1 = rect.y // s, (rect.y + rect.h - 1) // s
    return {
        PatchId(child_grid.level, r, c)
        for r in range(r0, r1 + 1)
        for c in range(c0, c1 + 1)
    }


class GroundTruthMask:
    """Per-pixel boolean importance, with cached area sums.

    Rectangle queries run off a summed-area table so that simulated oracles
    stay O(1) per rect regardless of patch size.
    """

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {pixels.shape}")
        self.pixels = pixels.astype(bool)
        self.height, self.width = self.pixels.shape
        if self.height < 1 or self.width < 1:
            raise ValueError("mask must be at least 1x1")

    @cached_property
    def _integral(self) -> np.ndarray:
        table = np.zeros((self.height + 1, self.width + 1), dtype=np.int64)
        np.cumsum(np.cumsum(self.pixels, axis=0), axis=1, out=table[1:, 1:])
        return table

    @cached_property
    def total(self) -> int:
        return int(self.pixels.sum())

    def count_in(self, rect: PixelRect) -> int:
        """Number of important pixels inside a rect (must lie in bounds)."""
        x0, y0, w, h = rect
        x1, y1 = x0 + w, y0 + h
        if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height or w < 1 or h < 1:
            raise ValueError(f"rect {rect} outside {self.width}x{self.height} mask")
        t = self._integral
        return int(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])

    def patch_counts(self, grid: GridLevel) -> np.ndarray:
        """Important-pixel count of every patch, as a (rows, cols) array."""
        if (grid.width, grid.height) != (self.width, self.height):
            raise ValueError(
                f"mask is {self.width}x{self.height} but grid covers {grid.width}x{grid.height}"
            )
        ye = np.minimum(np.arange(grid.rows + 1) * grid.patch_side, self.height)
        xe = np.minimum(np.arange(grid.cols + 1) * grid.patch_side, self.width)
        t = self._integral[np.ix_(ye, xe)]
        return t[1:, 1:] - t[:-1, 1:] - t[1:, :-1] + t[:-1, :-1]


def coarsen_mask(mask: GroundTruthMask, grid: GridLevel) -> Set[PatchId]:
    """Patches containing at least one important pixel.

    The one-pixel rule (rather than majority) means coarsening only grows
    the marked area, so nothing important can vanish at a coarse level.
    """
    counts = mask.patch_counts(grid)
    return {
        PatchId(grid.level, int(r), int(c)) for r, c in np.argwhere(counts > 0)
    }


def rasterize_patches(scores: Mapping[PatchId, float], grid: GridLevel) -> np.ndarray:
    """Expand per-patch scores to a per-pixel float raster.

    Each pixel takes the score of its containing patch; unlisted patches
    score 0. Scores must lie in [0, 1].
    """
    raster = np.zeros((grid.height, grid.width), dtype=np.float64)
    for pid, score in scores.items():
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"score {score} for patch {pid} outside [0, 1]")
        x, y, w, h = patch_rect(grid, pid)
        raster[y : y + h, x : x + w] = score
    return raster


# ---------------------------------------------------------------------------
# File formats: 8-bit single-channel PNG for masks and score rasters,
# CSV `level,row,col,score` for per-patch scores.
# ---------------------------------------------------------------------------


def load_mask_png(path) -> GroundTruthMask:
    """Read a mask PNG: 0 = unimportant, any nonzero value = important."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return GroundTruthMask(arr > 0)


def save_mask_png(mask: GroundTruthMask, path) -> None:
    Image.fromarray(np.where(mask.pixels, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def save_raster_png(raster: np.ndarray, path) -> None:
    """Write a [0,1] score raster as 8-bit grayscale (0-255 linear)."""
    arr = np.asarray(raster, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("raster values must lie in [0, 1]")
    Image.fromarray(np.rint(arr * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def load_raster_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_score_csv(scores: Mapping[PatchId, float], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "row", "col", "score"])
        for pid in sorted(scores):
            writer.writerow([pid.level, pid.row, pid.col, repr(float(scores[pid]))])


def read_score_csv(path) -> Dict[PatchId, float]:
    scores: Dict[PatchId, float] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "level":
                continue
            level, r, c, score = row
            scores[PatchId(int(level), int(r), int(c))] = float(score)
    return scores
