"""Variation of Information evaluation: trained classifier vs the
gray-value thresholding baseline.

Trains the offline baseline briefly on synthetic data, produces dense
probability maps for held-out images, and prints both VI-vs-threshold
curves.  Lower is better; the split term counts over-segmentation,
the merge term under-segmentation.

Run:  python3 demos/03_vi_evaluation.py   (about a minute)
"""

import tempfile

from icontrain.segmetrics import gray_baseline_curve, vi_curve
from icontrain.synth import synth_data
from icontrain.trainer import ProjectConfig, predict_image, train_offline

train_imgs, train_truths = synth_data(seed=5, n_images=3, size=128)
test_imgs, test_truths = synth_data(seed=6, n_images=2, size=128)

config = ProjectConfig(patch_size=21, num_filters=8, fc_units=32,
                       batch_size=512, seed=5)
with tempfile.NamedTemporaryFile(suffix=".ckpt") as fh:
    model = train_offline(train_imgs, train_truths, config, fh.name,
                          iterations=10)

maps = [predict_image(model, test_imgs[t.image_id], 1, t.image_id)
        for t in test_truths]
thresholds = [0.1, 0.3, 0.5, 0.7, 0.9]
cnn = vi_curve(maps, test_truths, thresholds)
gray = gray_baseline_curve(test_imgs, test_truths, thresholds)

print(f"{'t':>5} | {'CNN vi (split/merge)':^24} | {'gray vi':^10}")
for c, g in zip(cnn, gray):
    print(f"{c.threshold:5.2f} | {c.vi_total:6.3f} ({c.vi_split:.3f}/"
          f"{c.vi_merge:.3f})        | {g.vi_total:8.3f}")
print(f"\nbest CNN VI  {min(r.vi_total for r in cnn):.3f}")
print(f"best gray VI {min(r.vi_total for r in gray):.3f}")
