"""Training loop, checkpoint-on-improvement, prediction, and the
offline dense-training baseline.

One training iteration: draw a class-balanced batch, prepend the
hard-example buffer, shuffle, run SGD minibatches, re-evaluate every
sample of the iteration, keep the worst half of the poorly-performing
set for the next round, measure validation accuracy, and publish a
checkpoint when it strictly improves.  Everything is deterministic in
(annotation log, seed, config).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import nn
from .errors import InsufficientAnnotationsError, NotReadyError
from .sampling import (
    AnnotationStore,
    AnnotationStroke,
    HardExampleBuffer,
    MEMBRANE,
    NON_MEMBRANE,
    Sample,
    build_validation_split,
    draw_training_batch,
    extract_patch,
    one_hot,
    retain_for_next_iteration,
    select_hard_examples,
)
from .segmetrics import LabelMap, ProbabilityMap, default_threshold_grid

EVAL_CHUNK = 1024


@dataclass
class ProjectConfig:
    image_dir: str = "."
    patch_size: int = 47
    num_filters: int = 48
    fc_units: int = 200
    sgd: nn.SgdConfig = field(default_factory=nn.SgdConfig)
    batch_size: int = 4096
    delta: float = 0.5
    warmup_samples: int = 100_000
    thresholds: list[float] = field(default_factory=lambda: list(default_threshold_grid()))
    preview_stride: int = 4
    seed: int = 0
    checkpoint_path: str = "model.ckpt"
    annotation_log: str = "annotations.jsonl"
    port: int = 8000

    @classmethod
    def from_json(cls, path) -> "ProjectConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        sgd = nn.SgdConfig(**raw.pop("sgd", {}))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(sgd=sgd, **raw)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)


@dataclass
class TrainingStatus:
    iteration: int = 0
    samples_drawn_total: int = 0
    hard_buffer_size: int = 0
    validation_accuracy: float = 0.0
    best_validation_accuracy: float = 0.0
    model_revision: int = 0
    warmup_remaining: int = 0
    last_error: str | None = None


def _normalize(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


class Trainer:
    """Single-writer owner of the model, the hard-example buffer, and
    the published (checkpointed) snapshot."""

    def __init__(self, store: AnnotationStore, images: dict[str, np.ndarray],
                 config: ProjectConfig):
        self.store = store
        self.images = {k: _normalize(v) for k, v in images.items()}
        self.config = config
        self.model = nn.init_model(
            patch_size=config.patch_size,
            num_filters=config.num_filters,
            fc_units=config.fc_units,
            seed=config.seed,
        )
        self.buffer = HardExampleBuffer(delta=config.delta)
        self.status = TrainingStatus(warmup_remaining=config.warmup_samples)
        self.last_draw_seq = 0
        self.published: nn.CnnModel | None = None
        self.published_history: list[tuple[int, float]] = []  # (revision, accuracy)
        self.last_sb_size = 0
        self._pending_publish: nn.CnnModel | None = None

    # ------------------------------------------------------------ internals

    def _patches_for(self, samples: list[Sample]) -> np.ndarray:
        ps = self.config.patch_size
        out = np.empty((len(samples), ps, ps), dtype=np.float32)
        for i, s in enumerate(samples):
            out[i] = extract_patch(
                self.images[s.image_id], s.center, ps, s.rotation_angle
            )
        return out

    def _predict_patches(self, patches: np.ndarray, model=None) -> np.ndarray:
        model = model or self.model
        preds = np.empty((len(patches), 2), dtype=np.float32)
        for i in range(0, len(patches), EVAL_CHUNK):
            preds[i : i + EVAL_CHUNK] = nn.forward_batch(
                model, patches[i : i + EVAL_CHUNK]
            )
        return preds

    def validation_accuracy(self) -> float:
        _, val = build_validation_split(self.store)
        if not val:
            return 0.0
        samples = [
            Sample(img, (x, y), label, seq, 0.0) for img, x, y, label, seq in val
        ]
        preds = self._predict_patches(self._patches_for(samples))
        hits = sum(
            int(np.argmax(p) == s.class_label) for p, s in zip(preds, samples)
        )
        return hits / len(samples)

    # ------------------------------------------------------------ operations

    def train_iteration(self) -> TrainingStatus:
        cfg = self.config
        iteration = self.status.iteration + 1
        rng = np.random.default_rng([cfg.seed, iteration])
        try:
            batch = draw_training_batch(
                self.store, cfg.batch_size, self.last_draw_seq, rng
            )
        except InsufficientAnnotationsError as exc:
            self.status.last_error = str(exc)
            raise
        self.last_draw_seq = self.store.seq

        samples = list(self.buffer.entries) + batch
        order = rng.permutation(len(samples))
        samples = [samples[i] for i in order]
        patches = self._patches_for(samples)
        targets = np.stack([one_hot(s.class_label) for s in samples])

        mb = cfg.sgd.minibatch_size
        for i in range(0, len(samples), mb):
            grads, _ = nn.backward_batch(
                self.model, patches[i : i + mb], targets[i : i + mb]
            )
            self.model = nn.sgd_momentum_step(self.model, grads, cfg.sgd)

        preds = self._predict_patches(patches)
        s_b = select_hard_examples(zip(samples, preds), cfg.delta)
        self.last_sb_size = len(s_b)
        self.buffer = retain_for_next_iteration(s_b, cfg.delta)

        acc = self.validation_accuracy()
        self.model = nn.CnnModel(
            self.model.params, self.model.velocities, self.model.patch_size,
            self.model.num_filters, self.model.fc_units, acc, self.model.revision,
        )
        st = self.status
        st.iteration = iteration
        st.samples_drawn_total += len(batch)
        st.hard_buffer_size = len(self.buffer)
        st.validation_accuracy = acc
        st.warmup_remaining = max(0, cfg.warmup_samples - st.samples_drawn_total)
        st.last_error = None
        self.checkpoint_if_improved()
        st.model_revision = self.model.revision
        return st

    def checkpoint_if_improved(self) -> int | None:
        """Publish (atomic checkpoint + swap) iff validation accuracy
        strictly improved and warm-up is satisfied.  A failed disk
        write leaves the publication pending for the next iteration."""
        st = self.status
        if st.warmup_remaining > 0:
            return None
        candidate = self._pending_publish
        if self.model.validation_accuracy > st.best_validation_accuracy:
            candidate = self.model
        if candidate is None:
            return None
        try:
            nn.save_checkpoint(candidate, self.config.checkpoint_path)
        except OSError as exc:
            self._pending_publish = candidate
            st.last_error = f"checkpoint write failed: {exc}"
            return None
        self._pending_publish = None
        st.best_validation_accuracy = candidate.validation_accuracy
        self.published = candidate
        self.published_history.append(
            (candidate.revision, candidate.validation_accuracy)
        )
        return candidate.revision


def prediction_grid(h: int, w: int, stride: int):
    """Row/column indices evaluated directly at a given stride; the
    last row and column are always included."""
    gy = np.unique(np.append(np.arange(0, h, stride), h - 1))
    gx = np.unique(np.append(np.arange(0, w, stride), w - 1))
    return gy, gx


def predict_image(model: nn.CnnModel, image: np.ndarray, stride: int = 1,
                  image_id: str = "") -> ProbabilityMap:
    """Membrane probability per pixel.  With stride > 1 only grid
    pixels (inclusive of the last row/column) run the network; the
    rest are bilinearly interpolated."""
    if model is None:
        raise NotReadyError("no published model")
    image = _normalize(image)
    h, w = image.shape
    ps = model.patch_size
    half = ps // 2
    gy, gx = prediction_grid(h, w, stride)
    padded = np.pad(image, ps, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (ps, ps))
    grid = np.empty((len(gy), len(gx)), dtype=np.float32)
    # row blocks keep the materialized patch batches small
    block = max(1, EVAL_CHUNK // max(1, len(gx)))
    for i in range(0, len(gy), block):
        rows = gy[i : i + block]
        patches = windows[np.ix_(rows + ps - half, gx + ps - half)]
        patches = patches.reshape(-1, ps, ps)
        probs = np.empty(len(patches), dtype=np.float32)
        for j in range(0, len(patches), EVAL_CHUNK):
            probs[j : j + EVAL_CHUNK] = nn.forward_batch(
                model, patches[j : j + EVAL_CHUNK]
            )[:, MEMBRANE]
        grid[i : i + block] = probs.reshape(len(rows), len(gx))
    if stride == 1:
        values = grid
    else:
        interp = RegularGridInterpolator(
            (gy.astype(np.float64), gx.astype(np.float64)), grid.astype(np.float64)
        )
        ys, xs = np.mgrid[0:h, 0:w]
        values = interp(np.stack([ys.ravel(), xs.ravel()], axis=1)).reshape(h, w)
    values = np.clip(values, 0.0, 1.0)
    return ProbabilityMap(image_id, values, model.revision, stride)


def simulate_annotator(
    truth: LabelMap,
    pmap: ProbabilityMap | None,
    budget: int,
    rng: np.random.Generator,
    author: str = "sim",
) -> list[AnnotationStroke]:
    """Strokes at the classifier's worst mistakes, split evenly
    between classes; a balanced random scatter before any model
    exists.  At most `budget` pixels total."""
    if budget <= 0:
        return []
    membrane = truth.labels == 0
    ys, xs = np.nonzero(membrane)
    yn, xn = np.nonzero(~membrane)
    per_class = budget // 2
    if pmap is None:
        mi = rng.permutation(len(ys))[:per_class]
        ni = rng.permutation(len(yn))[:per_class]
    else:
        d = np.abs(membrane.astype(np.float64) - pmap.values)
        mi = np.argsort(-d[ys, xs], kind="stable")[:per_class]
        ni = np.argsort(-d[yn, xn], kind="stable")[:per_class]
    strokes = []
    if len(mi):
        strokes.append(AnnotationStroke(
            truth.image_id, MEMBRANE,
            [(int(xs[i]), int(ys[i])) for i in mi], author,
        ))
    if len(ni):
        strokes.append(AnnotationStroke(
            truth.image_id, NON_MEMBRANE,
            [(int(xn[i]), int(yn[i])) for i in ni], author,
        ))
    return strokes


def train_offline(
    images: dict[str, np.ndarray],
    truths: list[LabelMap],
    config: ProjectConfig,
    out_path: str,
    iterations: int = 30,
) -> nn.CnnModel:
    """Dense-label baseline: same architecture and SGD settings,
    class-balanced draws from all ground-truth pixels for a fixed
    iteration budget.  Deterministic in config.seed."""
    truth_by_id = {t.image_id: t for t in truths}
    missing = [i for i in images if i not in truth_by_id]
    if missing:
        raise InsufficientAnnotationsError(f"missing dense labels for {missing}")
    norm = {k: _normalize(v) for k, v in images.items()}
    pools = {MEMBRANE: [], NON_MEMBRANE: []}
    for image_id in sorted(images):
        membrane = truth_by_id[image_id].labels == 0
        for label, mask in ((MEMBRANE, membrane), (NON_MEMBRANE, ~membrane)):
            ys, xs = np.nonzero(mask)
            pools[label].append((image_id, xs, ys))

    model = nn.init_model(
        patch_size=config.patch_size, num_filters=config.num_filters,
        fc_units=config.fc_units, seed=config.seed,
    )
    ps = config.patch_size
    for it in range(iterations):
        rng = np.random.default_rng([config.seed, 7_777, it])
        samples = []
        for label in (NON_MEMBRANE, MEMBRANE):
            chunks = pools[label]
            sizes = np.array([len(c[1]) for c in chunks])
            total = sizes.sum()
            for _ in range(config.batch_size // 2):
                flat = rng.integers(0, total)
                ci = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
                off = flat - (np.cumsum(sizes)[ci - 1] if ci else 0)
                image_id, xs, ys = chunks[ci]
                samples.append(
                    (image_id, (int(xs[off]), int(ys[off])), label,
                     float(rng.uniform(0, 360)))
                )
        order = rng.permutation(len(samples))
        patches = np.empty((len(samples), ps, ps), dtype=np.float32)
        targets = np.empty((len(samples), 2), dtype=np.float32)
        for row, i in enumerate(order):
            image_id, center, label, angle = samples[i]
            patches[row] = extract_patch(norm[image_id], center, ps, angle)
            targets[row] = one_hot(label)
        mb = config.sgd.minibatch_size
        for i in range(0, len(samples), mb):
            grads, _ = nn.backward_batch(
                model, patches[i : i + mb], targets[i : i + mb]
            )
            model = nn.sgd_momentum_step(model, grads, config.sgd)
    nn.save_checkpoint(model, out_path)
    return model
