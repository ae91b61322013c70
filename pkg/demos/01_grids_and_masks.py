"""
Grids, refinement and masks
===========================

Partition an image into square patches, refine the grid, and rasterize
per-patch scores back to pixels. Artifacts land in demo-output/01/.
"""

import os

import numpy as np

from punchhole import (
    GroundTruthMask,
    PatchId,
    coarsen_mask,
    partition,
    patch_rect,
    rasterize_patches,
    refine,
)
from punchhole.grid import save_mask_png, save_raster_png, write_score_csv

out_dir = os.path.join(os.path.dirname(__file__), "..", "demo-output", "01")
os.makedirs(out_dir, exist_ok=True)

# A 100x70 image does not divide evenly by 16: border patches are clipped,
# never padded, so every pixel belongs to exactly one patch.
grid = partition(100, 70, 16)
print(f"level 0: {grid.rows}x{grid.cols} patches of side {grid.patch_side}")
print(f"  right border patch rect: {patch_rect(grid, PatchId(0, 0, grid.cols - 1))}")
print(f"  bottom border patch rect: {patch_rect(grid, PatchId(0, grid.rows - 1, 0))}")

finer = refine(grid)
print(f"level 1: {finer.rows}x{finer.cols} patches of side {finer.patch_side}")

# A ground-truth mask marks which pixels matter for some question.
pixels = np.zeros((70, 100), dtype=bool)
pixels[10:30, 12:40] = True  # a legend, say
pixels[45:60, 70:95] = True  # and the data region it refers to
mask = GroundTruthMask(pixels)
save_mask_png(mask, os.path.join(out_dir, "mask.png"))

# Coarsening marks every patch containing at least one important pixel, so
# the marked area only ever grows: nothing important can be lost at a
# coarser resolution.
for g in (grid, finer):
    marked = coarsen_mask(mask, g)
    print(f"level {g.level}: {len(marked)}/{g.n_patches} patches contain importance")

scores = {pid: 1.0 for pid in coarsen_mask(mask, grid)}
raster = rasterize_patches(scores, grid)
save_raster_png(raster, os.path.join(out_dir, "coarse_importance.png"))
write_score_csv(scores, os.path.join(out_dir, "coarse_importance.csv"))
print(f"wrote mask.png, coarse_importance.png and .csv to {os.path.abspath(out_dir)}")
