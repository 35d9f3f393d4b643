"""Simulated interactive training session.

A scripted annotator stands in for the human: it seeds a few random
labels, then after every couple of iterations looks at the current
probability overlay and paints the classifier's worst mistakes.

Run:  python3 demos/02_interactive_training.py
"""

import tempfile

import numpy as np

from icontrain.sampling import AnnotationStore
from icontrain.synth import synth_data
from icontrain.trainer import (
    ProjectConfig, Trainer, predict_image, simulate_annotator,
)

images, truths = synth_data(seed=1, n_images=3, size=128)
workdir = tempfile.mkdtemp()
config = ProjectConfig(
    patch_size=21, num_filters=8, fc_units=32, batch_size=256,
    warmup_samples=0, seed=1, preview_stride=4,
    checkpoint_path=f"{workdir}/model.ckpt",
    annotation_log=f"{workdir}/annotations.jsonl",
)
store = AnnotationStore(config.annotation_log,
                        {k: v.shape for k, v in images.items()})
trainer = Trainer(store, images, config)
rng = np.random.default_rng(1)

# cold start: no model yet, so scatter a balanced random seed set
for truth in truths:
    for stroke in simulate_annotator(truth, None, 150, rng):
        store.record_stroke(stroke)

for it in range(1, 11):
    status = trainer.train_iteration()
    print(f"iteration {status.iteration:2d}: "
          f"val acc {status.validation_accuracy:.3f} "
          f"(best {status.best_validation_accuracy:.3f}), "
          f"hard buffer {status.hard_buffer_size}, "
          f"revision {status.model_revision}")
    if it % 2 == 0:
        truth = truths[it // 2 % len(truths)]
        overlay = predict_image(trainer.model, images[truth.image_id],
                                config.preview_stride, truth.image_id)
        for stroke in simulate_annotator(truth, overlay, 200, rng):
            store.record_stroke(stroke)
        print(f"  annotated 200 px on {truth.image_id} at its worst mistakes")

print(f"\npublished checkpoints (revision, accuracy): "
      f"{trainer.published_history}")
print(f"checkpoint on disk: {config.checkpoint_path}")
