"""Segmentation evaluation: thresholding, connected components, and
Variation of Information curves.

VI is H(pred | truth) + H(truth | pred) over the joint label
distribution of counted pixels, log base 2 (reported in bits).  The
split term H(pred | truth) measures over-segmentation, the merge term
H(truth | pred) under-segmentation.  Membrane pixels (label 0) are
excluded by default since VI compares region clusterings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import PairingError, ShapeError

LOG_BASE = 2


@dataclass
class ProbabilityMap:
    image_id: str
    values: np.ndarray  # (H, W) membrane probability in [0, 1]
    model_revision: int = 0
    stride: int = 1

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError("probability map must be 2-D")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        self.values = v


@dataclass
class LabelMap:
    image_id: str
    labels: np.ndarray  # (H, W) non-negative ints; 0 = membrane/boundary

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError("label map must be 2-D")
        if lab.size and lab.min() < 0:
            raise ValueError("labels must be non-negative")
        self.labels = lab


@dataclass
class ViResult:
    threshold: float
    vi_total: float
    vi_split: float
    vi_merge: float


def threshold_map(pmap, t: float) -> np.ndarray:
    """Boolean membrane mask: value >= t."""
    if not 0 <= t <= 1:
        raise ValueError(f"threshold {t} outside [0, 1]")
    values = pmap.values if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)
    return values >= t


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def connected_components(membrane: np.ndarray, image_id="") -> tuple[LabelMap, int]:
    """Label maximal 4-connected interior (non-membrane) regions.

    Labels are positive integers in raster-scan order of first
    encounter; membrane pixels get 0.
    """
    membrane = np.asarray(membrane, dtype=bool)
    interior = ~membrane
    raw, count = ndimage.label(interior, structure=_FOUR_CONN)
    labels = _relabel_raster_order(raw)
    return LabelMap(image_id, labels), count


def _relabel_raster_order(raw: np.ndarray) -> np.ndarray:
    flat = raw.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = uniq[np.argsort(first)]
    order = order[order != 0]
    remap = np.zeros(int(raw.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(1, len(order) + 1)
    return remap[raw]


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def variation_of_information(
    pred: LabelMap, truth: LabelMap, ignore_zero: bool = True, threshold: float = 0.0
) -> ViResult:
    """VI between two labelings, split/merge decomposition in bits."""
    a = pred.labels
    b = truth.labels
    if a.shape != b.shape:
        raise ShapeError(f"label maps differ in shape: {a.shape} vs {b.shape}")
    a = a.ravel()
    b = b.ravel()
    if ignore_zero:
        mask = (a != 0) & (b != 0)
        a, b = a[mask], b[mask]
    if a.size == 0:
        raise ValueError("no counted pixels for VI")
    # joint histogram over the pairs actually present
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    nb = bi.max() + 1
    joint = np.bincount(ai * nb + bi).astype(np.float64)
    joint = joint[joint > 0]
    h_joint = _entropy(joint)
    h_pred = _entropy(np.bincount(ai).astype(np.float64))
    h_truth = _entropy(np.bincount(bi).astype(np.float64))
    vi_split = max(h_joint - h_truth, 0.0)
    vi_merge = max(h_joint - h_pred, 0.0)
    return ViResult(threshold, vi_split + vi_merge, vi_split, vi_merge)


def default_threshold_grid() -> np.ndarray:
    """0.05 .. 0.95 step 0.05, 19 points."""
    return np.round(np.arange(1, 20) * 0.05, 10)


def vi_curve(maps, truths, thresholds=None, ignore_zero=True) -> list[ViResult]:
    """Average VI over images at each threshold, ordered by threshold.

    `maps` are ProbabilityMaps, `truths` LabelMaps; they pair by
    image_id.
    """
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    truth_by_id = {t.image_id: t for t in truths}
    pairs = []
    for m in maps:
        if m.image_id not in truth_by_id:
            raise PairingError(f"no ground truth for image {m.image_id!r}")
        pairs.append((m, truth_by_id[m.image_id]))
    if not pairs:
        raise PairingError("no probability maps supplied")
    results = []
    for t in thresholds:
        splits, merges = [], []
        for pmap, truth in pairs:
            labeled, _ = connected_components(threshold_map(pmap, t), pmap.image_id)
            try:
                vi = variation_of_information(labeled, truth, ignore_zero, t)
            except ValueError:
                # degenerate threshold left no jointly-labeled pixels;
                # count everything so the image is penalized rather
                # than dropped
                vi = variation_of_information(labeled, truth, False, t)
            splits.append(vi.vi_split)
            merges.append(vi.vi_merge)
        s, m = float(np.mean(splits)), float(np.mean(merges))
        results.append(ViResult(t, s + m, s, m))
    return results


def gray_baseline_curve(images, truths, thresholds=None, ignore_zero=True):
    """Same pipeline with inverted gray value as the membrane score.

    Membranes are dark, so a pixel counts as membrane iff
    intensity/255 <= 1 - t, i.e. the pseudo-probability is
    1 - intensity/255.  `images` maps image_id -> 2-D uint8 array.
    """
    maps = []
    for image_id, img in images.items():
        img = np.asarray(img)
        if img.dtype == np.uint8:
            gray = img.astype(np.float64) / 255.0
        else:
            gray = np.asarray(img, dtype=np.float64)
        maps.append(ProbabilityMap(image_id, 1.0 - gray))
    return vi_curve(maps, truths, thresholds, ignore_zero)
