"""Annotation store and training-batch assembly.

Strokes are persisted to an append-only JSONL log (one object per
line), replayed on open.  The effective label of a pixel is the one
from the stroke with the highest sequence number (last writer wins).
Batches are class-balanced, give priority to annotations newer than
the previous draw, and carry an independent uniform rotation per
sample.  A deterministic hash sends ~10% of labeled pixels to a
validation split that training never touches.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientAnnotationsError, OutOfBoundsError

MEMBRANE = 1
NON_MEMBRANE = 0
DEFAULT_DELTA = 0.5


@dataclass
class AnnotationStroke:
    image_id: str
    class_label: int
    pixels: list[tuple[int, int]]
    author: str = ""
    seq: int | None = None
    timestamp: float | None = None


@dataclass(slots=True)
class Sample:
    image_id: str
    center: tuple[int, int]
    class_label: int
    seq: int
    rotation_angle: float
    last_error: float | None = None


@dataclass
class HardExampleBuffer:
    entries: list[Sample] = field(default_factory=list)
    delta: float = DEFAULT_DELTA

    def __len__(self):
        return len(self.entries)


def is_validation_pixel(image_id: str, x: int, y: int) -> bool:
    """Stable ~10% holdout: hash(image_id, x, y) mod 10 == 0."""
    digest = hashlib.blake2b(
        f"{image_id}|{x}|{y}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % 10 == 0


class AnnotationStore:
    """Durable stroke log plus the derived effective label map.

    `image_shapes` maps image_id -> (height, width) and bounds-checks
    incoming strokes.  Sequence assignment is serialized here; callers
    from multiple threads must hold their own lock around
    record_stroke (the HTTP layer does).
    """

    def __init__(self, log_path, image_shapes: dict[str, tuple[int, int]]):
        self.log_path = os.fspath(log_path)
        self.image_shapes = dict(image_shapes)
        self.seq = 0
        # image_id -> {(x, y): (label, seq)}
        self._labels: dict[str, dict[tuple[int, int], tuple[int, int]]] = {}
        self._cache_key = None
        self._cache = None
        if os.path.exists(self.log_path):
            self._replay()

    def _replay(self):
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                stroke = AnnotationStroke(
                    image_id=rec["image_id"],
                    class_label=rec["class"],
                    pixels=[tuple(p) for p in rec["pixels"]],
                    author=rec.get("author", ""),
                    seq=rec["seq"],
                    timestamp=rec.get("timestamp"),
                )
                self._apply(stroke)
                self.seq = max(self.seq, stroke.seq)

    def _apply(self, stroke: AnnotationStroke):
        per_image = self._labels.setdefault(stroke.image_id, {})
        for xy in stroke.pixels:
            per_image[xy] = (stroke.class_label, stroke.seq)
        self._cache_key = None

    def _check(self, stroke: AnnotationStroke):
        if stroke.image_id not in self.image_shapes:
            raise OutOfBoundsError(f"unknown image {stroke.image_id!r}")
        if stroke.class_label not in (MEMBRANE, NON_MEMBRANE):
            raise ValueError(f"invalid class {stroke.class_label}")
        if not stroke.pixels:
            raise ValueError("stroke has no pixels")
        h, w = self.image_shapes[stroke.image_id]
        bad = [(x, y) for x, y in stroke.pixels if not (0 <= x < w and 0 <= y < h)]
        if bad:
            raise OutOfBoundsError(
                f"out-of-bounds pixels on {stroke.image_id}: {bad[:10]}"
            )

    def record_stroke(self, stroke: AnnotationStroke) -> int:
        """Validate, assign the next seq, append to the log, apply."""
        self._check(stroke)
        self.seq += 1
        stroke.seq = self.seq
        if stroke.timestamp is None:
            stroke.timestamp = time.time()
        rec = {
            "image_id": stroke.image_id,
            "class": stroke.class_label,
            "pixels": [list(p) for p in stroke.pixels],
            "author": stroke.author,
            "seq": stroke.seq,
            "timestamp": stroke.timestamp,
        }
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._apply(stroke)
        return stroke.seq

    def effective_label(self, image_id, x, y):
        entry = self._labels.get(image_id, {}).get((x, y))
        return None if entry is None else entry[0]

    def strokes_for(self, image_id):
        """Effective labels for one image as {(x, y): (label, seq)}."""
        return dict(self._labels.get(image_id, {}))

    def last_seq_for(self, image_id) -> int:
        per_image = self._labels.get(image_id, {})
        return max((s for _, s in per_image.values()), default=0)

    def labeled_pixels(self, exclude_validation=True):
        """Per-class lists of (image_id, x, y, seq), cached per store state."""
        key = (self.seq, exclude_validation)
        if self._cache_key == key:
            return self._cache
        by_class = {NON_MEMBRANE: [], MEMBRANE: []}
        for image_id in sorted(self._labels):
            for (x, y), (label, seq) in sorted(self._labels[image_id].items()):
                if exclude_validation and is_validation_pixel(image_id, x, y):
                    continue
                by_class[label].append((image_id, x, y, seq))
        self._cache_key = key
        self._cache = by_class
        return by_class


def extract_patch(image, center, patch_size, angle_degrees=0.0):
    """Square window around `center`, rotated by `angle_degrees`.

    `image` is 2-D, uint8 or float in [0, 1]; uint8 is normalized by
    255.  The image is reflection-padded so windows near the border
    are defined.  Bilinear interpolation; rotation fixes the center
    pixel exactly.
    """
    image = np.asarray(image)
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    h, w = image.shape
    cx, cy = center
    if not (0 <= cx < w and 0 <= cy < h):
        raise OutOfBoundsError(f"center {center} outside {w}x{h} image")
    pad = patch_size
    padded = np.pad(image, pad, mode="reflect")
    half = patch_size // 2
    offs = np.arange(-half, half + 1, dtype=np.float64)
    dx, dy = np.meshgrid(offs, offs)  # dy rows, dx cols
    theta = math.radians(angle_degrees)
    c, s = math.cos(theta), math.sin(theta)
    # sample source = inverse rotation of the output grid
    sx = cx + pad + c * dx + s * dy
    sy = cy + pad - s * dx + c * dy
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    v00 = padded[y0, x0]
    v01 = padded[y0, x0 + 1]
    v10 = padded[y0 + 1, x0]
    v11 = padded[y0 + 1, x0 + 1]
    patch = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    return np.clip(patch, 0.0, 1.0).astype(np.float32)


def draw_training_batch(
    store: AnnotationStore,
    n: int,
    last_draw_seq: int,
    rng: np.random.Generator,
) -> list[Sample]:
    """n/2 samples per class; up to half of each class's slots come
    uniformly from pixels newer than `last_draw_seq`, the rest
    uniformly from all labeled (non-validation) pixels.  Classes with
    fewer distinct pixels than slots are filled with replacement (and
    a balance warning).  Every sample gets an independent uniform
    rotation in [0, 360).
    """
    if n < 2 or n % 2 != 0:
        raise ValueError("n must be an even integer >= 2")
    by_class = store.labeled_pixels()
    for label in (NON_MEMBRANE, MEMBRANE):
        if not by_class[label]:
            name = "membrane" if label == MEMBRANE else "non-membrane"
            raise InsufficientAnnotationsError(f"no labeled pixels for class {name}")
    slots = n // 2
    out: list[Sample] = []
    for label in (NON_MEMBRANE, MEMBRANE):
        pixels = by_class[label]
        if len(pixels) < slots:
            warnings.warn(
                f"class {label} has {len(pixels)} pixels for {slots} slots; "
                "sampling with replacement",
                stacklevel=2,
            )
        fresh = [p for p in pixels if p[3] > last_draw_seq]
        n_new = slots // 2 if fresh else 0
        picks = []
        if n_new:
            idx = rng.integers(0, len(fresh), size=n_new)
            picks.extend(fresh[i] for i in idx)
        idx = rng.integers(0, len(pixels), size=slots - len(picks))
        picks.extend(pixels[i] for i in idx)
        for image_id, x, y, seq in picks:
            out.append(
                Sample(
                    image_id=image_id,
                    center=(x, y),
                    class_label=label,
                    seq=seq,
                    rotation_angle=float(rng.uniform(0.0, 360.0)),
                )
            )
    return out


def one_hot(label: int) -> np.ndarray:
    t = np.zeros(2, dtype=np.float32)
    t[label] = 1.0
    return t


def select_hard_examples(evaluated, delta=DEFAULT_DELTA) -> list[Sample]:
    """evaluated: iterable of (Sample, prediction[2]).  Sets last_error
    on every sample; returns those with L2 error strictly above delta.
    """
    hard = []
    for sample, pred in evaluated:
        err = float(np.linalg.norm(one_hot(sample.class_label) - np.asarray(pred)))
        sample.last_error = err
        if err > delta:
            hard.append(sample)
    return hard


def retain_for_next_iteration(s_b: list[Sample], delta=DEFAULT_DELTA) -> HardExampleBuffer:
    """Keep the floor(|S_b|/2) worst samples (largest error; ties by
    newer seq, then center).  Replaces any previous buffer wholesale.
    """
    keep = len(s_b) // 2
    ranked = sorted(s_b, key=lambda s: (-s.last_error, -s.seq, s.center))
    return HardExampleBuffer(entries=ranked[:keep], delta=delta)


def build_validation_split(store: AnnotationStore):
    """Deterministic (train, validation) pixel lists of
    (image_id, x, y, label, seq); validation iff the pixel hash lands
    in the 10% bucket."""
    train, val = [], []
    for image_id in sorted(store._labels):
        for (x, y), (label, seq) in sorted(store._labels[image_id].items()):
            rec = (image_id, x, y, label, seq)
            if is_validation_pixel(image_id, x, y):
                val.append(rec)
            else:
                train.append(rec)
    return train, val
