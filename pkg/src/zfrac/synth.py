"""Deterministic synthetic fixtures: analytic fractal rasters and a planted
defect-texture dataset for end-to-end checks."""

import numpy as np


def sierpinski_carpet(depth):
    """Boolean carpet of side 3**depth; analytic dimension ln 8 / ln 3."""
    grid = np.ones((1, 1), dtype=bool)
    for _ in range(depth):
        side = grid.shape[0]
        out = np.zeros((3 * side, 3 * side), dtype=bool)
        for bi in range(3):
            for bj in range(3):
                if bi == 1 and bj == 1:
                    continue
                out[bi * side : (bi + 1) * side, bj * side : (bj + 1) * side] = grid
        grid = out
    return grid


def sierpinski_triangle(depth):
    """Boolean triangle of side 2**depth via the Pascal-mod-2 rule; dimension ln 3 / ln 2."""
    side = 1 << depth
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return (i & j) == 0


def grid_to_image(grid, foreground=255, background=0):
    """Render a boolean grid as a uint8 image (foreground strictly above any
    threshold below it)."""
    return np.where(grid, foreground, background).astype(np.uint8)


def make_defect_dataset(n_images, size=128, seed=0, patch_depth=3):
    """Half smooth noise textures, half with a carpet-structured bright patch
    planted at a random position. Returns (images, labels); label 1 = defect."""
    rng = np.random.default_rng(seed)
    patch = sierpinski_carpet(patch_depth)  # 27x27 for depth 3
    ps = patch.shape[0]
    images = []
    labels = np.zeros(n_images, dtype=np.int32)
    for i in range(n_images):
        img = np.clip(rng.normal(100.0, 18.0, size=(size, size)), 0, 255)
        if i % 2 == 1:
            labels[i] = 1
            top = rng.integers(0, size - ps + 1)
            left = rng.integers(0, size - ps + 1)
            block = img[top : top + ps, left : left + ps]
            block[patch] = 230.0
            block[~patch] = 40.0
        images.append(img.astype(np.uint8))
    return images, labels
