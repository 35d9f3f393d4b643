"""PNG helpers: grayscale images, probability maps (8-bit quantized
with a JSON sidecar), and 16-bit label maps."""

from __future__ import annotations

import io
import json
import os

import numpy as np
from PIL import Image

from .segmetrics import LabelMap, ProbabilityMap


def load_gray_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def save_gray_png(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)


def gray_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(buf, "PNG")
    return buf.getvalue()


def probability_map_to_png(pmap: ProbabilityMap) -> bytes:
    return gray_png_bytes(np.round(pmap.values * 255).astype(np.uint8))


def save_probability_map(pmap: ProbabilityMap, path) -> None:
    """8-bit PNG (value = round(255*p)) plus a `.json` sidecar with
    model_revision and stride."""
    save_gray_png(np.round(pmap.values * 255).astype(np.uint8), path)
    sidecar = os.fspath(path) + ".json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"model_revision": pmap.model_revision, "stride": pmap.stride}, fh)


def load_probability_map(path, image_id=None) -> ProbabilityMap:
    values = load_gray_png(path).astype(np.float64) / 255.0
    meta = {"model_revision": 0, "stride": 1}
    sidecar = os.fspath(path) + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, encoding="utf-8") as fh:
            meta.update(json.load(fh))
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(path))[0]
    return ProbabilityMap(image_id, values, meta["model_revision"], meta["stride"])


def save_label_map(lmap: LabelMap, path) -> None:
    labels = np.asarray(lmap.labels)
    if labels.max(initial=0) > 0xFFFF:
        raise ValueError("label map has more than 65535 regions")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def load_label_map(path, image_id=None) -> LabelMap:
    with Image.open(path) as im:
        labels = np.asarray(im, dtype=np.int64)
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(path))[0]
    return LabelMap(image_id, labels)
