"""Walk through the CNN core: forward pass, gradients, SGD, checkpoints.

Run:  python3 demos/01_cnn_basics.py
"""

import tempfile

import numpy as np

from icontrain import nn

# A reduced network keeps this instant: 21-pixel patches, 4 filters
# per conv layer, 10 fully-connected units.
model = nn.init_model(patch_size=21, num_filters=4, fc_units=10, seed=0)
print("feature map sizes for patch 21:", nn.feature_map_sizes(21))
print("flattened dim:", model.flattened_dim)

rng = np.random.default_rng(0)
patch = rng.uniform(0, 1, (21, 21))
probs = nn.forward(model, patch)
print(f"forward: p(non-membrane)={probs[0]:.3f} p(membrane)={probs[1]:.3f} "
      f"(sum {probs.sum():.6f})")

# One SGD-with-momentum step on a single labeled patch.
target = np.array([0.0, 1.0])  # membrane
grads, loss = nn.backward(model, patch, target)
print(f"cross-entropy loss before step: {loss:.4f}")
model = nn.sgd_momentum_step(model, grads, nn.SgdConfig())
_, loss_after = nn.backward(model, patch, target)
print(f"after one step:                 {loss_after:.4f} "
      f"(revision {model.revision})")

# Checkpoints are versioned, little-endian, and bit-exact.
with tempfile.NamedTemporaryFile(suffix=".ckpt") as fh:
    nn.save_checkpoint(model, fh.name)
    loaded = nn.load_checkpoint(fh.name)
    same = all(
        np.array_equal(loaded.params[k], model.params[k])
        for k in nn.PARAM_ORDER
    )
    print("checkpoint round-trip bit-exact:", same)
