"""HTTP annotation/prediction service.

Three execution contexts share two handoff points: API handlers write
strokes through the store's serialized appender, the training thread
is the single writer of model state, and the prediction worker reads
the latest published snapshot.  Model publication is an atomic
attribute swap; prediction results are cached per image and tagged
with the revision and annotation seq they were computed from.
"""

from __future__ import annotations

import threading
import time
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .errors import InsufficientAnnotationsError, OutOfBoundsError
from .imgio import gray_png_bytes, probability_map_to_png
from .sampling import AnnotationStroke
from .trainer import Trainer, predict_image


class AnnotationIn(BaseModel):
    """POST /annotations body; the wire name for the label is "class"."""

    image_id: str
    class_label: int = Field(alias="class")
    pixels: list[tuple[int, int]]
    author: str = ""

    model_config = {"populate_by_name": True}


class ServiceState:
    """Owns the trainer, the worker threads, and the prediction cache."""

    def __init__(self, trainer: Trainer, raw_images):
        self.trainer = trainer
        self.raw_images = raw_images
        self.store = trainer.store
        self.store_lock = threading.Lock()
        # image_id -> (ProbabilityMap, annotation seq it reflects)
        self.cache: dict[str, tuple] = {}
        self.running = False
        self._threads: list[threading.Thread] = []

    # ------------------------------------------------------------- threads

    def start(self):
        self.running = True
        for target in (self._train_loop, self._predict_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        self.running = False
        for t in self._threads:
            t.join(timeout=10)
        self._threads.clear()

    def _train_loop(self):
        while self.running:
            try:
                self.trainer.train_iteration()
            except InsufficientAnnotationsError:
                time.sleep(0.2)
            except Exception as exc:  # keep serving; surface in status
                self.trainer.status.last_error = str(exc)
                time.sleep(0.5)

    def _stale_images(self):
        model = self.trainer.published
        if model is None:
            return []
        stale = []
        for image_id in self.raw_images:
            seq = self.store.last_seq_for(image_id)
            if seq == 0:
                continue
            cached = self.cache.get(image_id)
            if cached is None or cached[0].model_revision < model.revision \
                    or cached[1] < seq:
                stale.append((seq, image_id))
        # most recently annotated first
        return [i for _, i in sorted(stale, reverse=True)]

    def _predict_loop(self):
        while self.running:
            stale = self._stale_images()
            if not stale:
                time.sleep(0.1)
                continue
            image_id = stale[0]
            model = self.trainer.published
            seq = self.store.last_seq_for(image_id)
            pmap = predict_image(
                model, self.raw_images[image_id],
                self.trainer.config.preview_stride, image_id,
            )
            self.cache[image_id] = (pmap, seq)


def create_app(state: ServiceState) -> FastAPI:
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app):
        if not state.running:
            state.start()
        yield
        state.stop()

    app = FastAPI(title="icontrain", lifespan=lifespan)
    trainer = state.trainer

    @app.get("/images")
    def list_images():
        return {
            "images": [
                {"image_id": i, "height": a.shape[0], "width": a.shape[1]}
                for i, a in sorted(state.raw_images.items())
            ]
        }

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        if image_id not in state.raw_images:
            raise HTTPException(404, f"unknown image {image_id}")
        return Response(gray_png_bytes(state.raw_images[image_id]),
                        media_type="image/png")

    @app.post("/annotations")
    def post_annotation(body: AnnotationIn):
        stroke = AnnotationStroke(
            image_id=body.image_id, class_label=body.class_label,
            pixels=[tuple(p) for p in body.pixels], author=body.author,
        )
        try:
            with state.store_lock:
                seq = state.store.record_stroke(stroke)
        except OutOfBoundsError as exc:
            raise HTTPException(422, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return {"seq": seq}

    @app.get("/annotations")
    def get_annotations(image_id: str):
        if image_id not in state.raw_images:
            raise HTTPException(404, f"unknown image {image_id}")
        labels = state.store.strokes_for(image_id)
        return {
            "image_id": image_id,
            "pixels": [
                {"x": x, "y": y, "class": label, "seq": seq}
                for (x, y), (label, seq) in sorted(labels.items())
            ],
        }

    @app.get("/predictions/{image_id}")
    def get_prediction(image_id: str):
        if image_id not in state.raw_images:
            raise HTTPException(404, f"unknown image {image_id}")
        cached = state.cache.get(image_id)
        if cached is None:
            raise HTTPException(409, "prediction not ready (warm-up or queued)")
        pmap, _ = cached
        return Response(
            probability_map_to_png(pmap),
            media_type="image/png",
            headers={
                "X-Model-Revision": str(pmap.model_revision),
                "X-Stride": str(pmap.stride),
            },
        )

    @app.get("/status")
    def get_status():
        return asdict(trainer.status)

    return app
