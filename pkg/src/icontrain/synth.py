"""Synthetic cell-like images with dense ground truth.

Each image is a nearest-seed partition of the plane with 2-pixel-wide
dark boundaries, per-region intensity offsets, mild blur and additive
noise.  The ground truth is the 4-connected labeling of the
non-boundary pixels.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .segmetrics import LabelMap, connected_components

MIN_SEED_SEPARATION = 10


def _seed_points(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    pts: list[tuple[int, int]] = []
    while len(pts) < n:
        cand = rng.integers(2, size - 2, size=2)
        if all(
            (cand[0] - p[0]) ** 2 + (cand[1] - p[1]) ** 2 >= MIN_SEED_SEPARATION**2
            for p in pts
        ):
            pts.append((int(cand[0]), int(cand[1])))
    return np.array(pts)


def region_partition(rng: np.random.Generator, size: int, n_regions: int):
    """Nearest-seed region index per pixel, shape (size, size)."""
    seeds = _seed_points(rng, size, n_regions)
    ys, xs = np.mgrid[0:size, 0:size]
    d2 = (ys[..., None] - seeds[:, 0]) ** 2 + (xs[..., None] - seeds[:, 1]) ** 2
    return d2.argmin(axis=2)


def boundary_mask(regions: np.ndarray) -> np.ndarray:
    """Pixels whose region differs from a 4-neighbor (both sides of
    every region edge, hence ~2 pixels wide)."""
    mask = np.zeros(regions.shape, dtype=bool)
    mask[:-1, :] |= regions[:-1, :] != regions[1:, :]
    mask[1:, :] |= regions[1:, :] != regions[:-1, :]
    mask[:, :-1] |= regions[:, :-1] != regions[:, 1:]
    mask[:, 1:] |= regions[:, 1:] != regions[:, :-1]
    return mask


def synth_data(seed: int, n_images: int, size: int):
    """Images (uint8 grayscale) and matching ground-truth LabelMaps.

    Returns (images, truths): images is {image_id: array}, truths a
    list of LabelMap with regions positive and boundaries 0.
    Deterministic in `seed`.
    """
    if size < 128:
        raise ValueError("size must be >= 128")
    rng = np.random.default_rng(seed)
    n_regions = max(8, (size // 36) ** 2)
    images: dict[str, np.ndarray] = {}
    truths: list[LabelMap] = []
    for i in range(n_images):
        image_id = f"synth_{seed}_{i:03d}"
        regions = region_partition(rng, size, n_regions)
        membrane = boundary_mask(regions)
        offsets = rng.uniform(-0.08, 0.08, size=n_regions)
        img = 0.72 + offsets[regions]
        img[membrane] = 0.32
        img = ndimage.gaussian_filter(img, sigma=0.8)
        # smooth illumination bias; defeats any single global gray
        # threshold while leaving local contrast intact
        coarse = rng.uniform(-0.18, 0.18, size=(5, 5))
        img += ndimage.zoom(coarse, size / 5, order=3)[:size, :size]
        img += rng.normal(0.0, 0.07, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
        images[image_id] = np.round(img * 255).astype(np.uint8)
        truth, _ = connected_components(membrane, image_id)
        truths.append(truth)
    return images, truths
