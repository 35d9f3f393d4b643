"""Command-line entry points.

Exit codes: 0 success, 2 bad configuration/arguments, 3 insufficient
data.
"""

from __future__ import annotations

import csv
import glob
import os
import sys

import click
import numpy as np

from . import nn
from .errors import CheckpointFormatError, InsufficientAnnotationsError, PairingError
from .imgio import (
    load_gray_png, load_label_map, load_probability_map,
    save_gray_png, save_label_map, save_probability_map,
)
from .sampling import AnnotationStore
from .segmetrics import LOG_BASE, gray_baseline_curve, vi_curve
from .synth import synth_data
from .trainer import ProjectConfig, Trainer, predict_image, train_offline


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_image_dir(path: str) -> dict[str, np.ndarray]:
    images = {}
    for p in sorted(glob.glob(os.path.join(path, "*.png"))):
        images[os.path.splitext(os.path.basename(p))[0]] = load_gray_png(p)
    return images


@click.group()
def main():
    """Interactive CNN pixel-classifier training tools."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run the annotation/training/prediction service."""
    import uvicorn

    from .service import ServiceState, create_app

    try:
        config = ProjectConfig.from_json(config_path)
    except (ValueError, OSError) as exc:
        _fail(2, f"bad config: {exc}")
    raw_images = _load_image_dir(config.image_dir)
    if not raw_images:
        _fail(2, f"no PNG images in {config.image_dir}")
    store = AnnotationStore(
        config.annotation_log, {k: v.shape for k, v in raw_images.items()}
    )
    trainer = Trainer(store, raw_images, config)
    state = ServiceState(trainer, raw_images)
    uvicorn.run(create_app(state), host="127.0.0.1", port=config.port)


@main.command("train-offline")
@click.option("--images", "images_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--iterations", default=30, show_default=True)
def train_offline_cmd(images_dir, labels_dir, out_path, config_path, iterations):
    """Train the dense-label baseline and write a checkpoint."""
    config = ProjectConfig()
    if config_path:
        try:
            config = ProjectConfig.from_json(config_path)
        except (ValueError, OSError) as exc:
            _fail(2, f"bad config: {exc}")
    images = _load_image_dir(images_dir)
    truths = []
    for image_id in images:
        p = os.path.join(labels_dir, f"{image_id}.png")
        if not os.path.exists(p):
            _fail(3, f"missing dense labels for {image_id}")
        truths.append(load_label_map(p, image_id))
    if not images:
        _fail(3, f"no PNG images in {images_dir}")
    try:
        train_offline(images, truths, config, out_path, iterations)
    except InsufficientAnnotationsError as exc:
        _fail(3, str(exc))
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--stride", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def predict(ckpt, image_path, stride, out_path):
    """Write the membrane probability map for one image."""
    try:
        model = nn.load_checkpoint(ckpt)
    except CheckpointFormatError as exc:
        _fail(2, str(exc))
    image = load_gray_png(image_path)
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    pmap = predict_image(model, image, stride, image_id)
    save_probability_map(pmap, out_path)
    click.echo(f"wrote {out_path} (revision {pmap.model_revision}, stride {stride})")


def _parse_grid(spec: str):
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        _fail(2, f"bad grid {spec!r}, expected lo:hi:step")
    if step <= 0 or not (0 <= lo <= hi <= 1):
        _fail(2, f"bad grid {spec!r}")
    n = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


@main.command("evaluate-vi")
@click.option("--maps", "maps_dir", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_dir", required=True, type=click.Path(exists=True))
@click.option("--grid", default="0.05:0.95:0.05", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--gray-baseline", is_flag=True,
              help="Treat --maps as raw grayscale images and threshold them.")
def evaluate_vi(maps_dir, truth_dir, grid, out_path, gray_baseline):
    """Average VI-vs-threshold curve over a directory of maps."""
    thresholds = _parse_grid(grid)
    truths = [
        load_label_map(p)
        for p in sorted(glob.glob(os.path.join(truth_dir, "*.png")))
    ]
    map_paths = sorted(glob.glob(os.path.join(maps_dir, "*.png")))
    if not map_paths:
        _fail(3, f"no PNG maps in {maps_dir}")
    try:
        if gray_baseline:
            images = _load_image_dir(maps_dir)
            curve = gray_baseline_curve(images, truths, thresholds)
        else:
            maps = [load_probability_map(p) for p in map_paths]
            curve = vi_curve(maps, truths, thresholds)
    except PairingError as exc:
        _fail(3, str(exc))
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["threshold", "vi_total", "vi_split", "vi_merge", "n_images", "log_base"]
        )
        for r in curve:
            writer.writerow(
                [r.threshold, r.vi_total, r.vi_split, r.vi_merge,
                 len(map_paths), LOG_BASE]
            )
    click.echo(f"wrote {out_path} ({len(curve)} thresholds)")


@main.command("synth-data")
@click.option("--seed", default=0, show_default=True)
@click.option("--n", "n_images", default=10, show_default=True)
@click.option("--size", default=256, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth_data_cmd(seed, n_images, size, out_dir):
    """Generate synthetic cell images with dense ground truth."""
    try:
        images, truths = synth_data(seed, n_images, size)
    except ValueError as exc:
        _fail(2, str(exc))
    img_dir = os.path.join(out_dir, "images")
    lab_dir = os.path.join(out_dir, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lab_dir, exist_ok=True)
    for truth in truths:
        save_gray_png(images[truth.image_id], os.path.join(img_dir, f"{truth.image_id}.png"))
        save_label_map(truth, os.path.join(lab_dir, f"{truth.image_id}.png"))
    click.echo(f"wrote {n_images} images to {out_dir}")


if __name__ == "__main__":
    main()
