"""Small two-conv-layer CNN for membrane / non-membrane pixel classification.

Everything is plain numpy: valid 5x5 convolutions, 2x2 max pooling
(floor semantics, so odd feature maps drop their last row/column), a
ReLU fully-connected layer and a 2-way softmax output.  Training is
SGD with momentum over minibatches.  Models are immutable values: an
update step returns a fresh model with a bumped revision.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointFormatError, NumericError, ShapeError

KERNEL = 5

PARAM_ORDER = (
    "conv1_weights",
    "conv1_bias",
    "conv2_weights",
    "conv2_bias",
    "fc_weights",
    "fc_bias",
    "out_weights",
    "out_bias",
)

CHECKPOINT_MAGIC = b"ICON"
CHECKPOINT_VERSION = 1


def feature_map_sizes(patch_size: int) -> tuple[int, int, int, int]:
    """Spatial sizes after conv1, pool1, conv2, pool2 for a square patch."""
    c1 = patch_size - KERNEL + 1
    p1 = c1 // 2
    c2 = p1 - KERNEL + 1
    p2 = c2 // 2
    return c1, p1, c2, p2


def flattened_dim(patch_size: int, num_filters: int) -> int:
    return num_filters * feature_map_sizes(patch_size)[3] ** 2


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    minibatch_size: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")


@dataclass(frozen=True)
class CnnModel:
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]
    patch_size: int
    num_filters: int
    fc_units: int
    validation_accuracy: float = 0.0
    revision: int = 0

    def __post_init__(self):
        if self.patch_size < 21 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 21")
        for name in PARAM_ORDER:
            if self.velocities[name].shape != self.params[name].shape:
                raise ShapeError(f"velocity shape mismatch for {name}")
            if not np.all(np.isfinite(self.params[name])):
                raise NumericError(f"non-finite values in {name}")

    @property
    def flattened_dim(self) -> int:
        return flattened_dim(self.patch_size, self.num_filters)


def _glorot(rng: np.random.Generator, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_model(
    patch_size: int = 47,
    num_filters: int = 48,
    fc_units: int = 200,
    seed: int = 0,
    dtype=np.float32,
) -> CnnModel:
    """Fresh model: uniform Glorot weights, zero biases, zero velocities."""
    if patch_size < 21 or patch_size % 2 == 0:
        raise ValueError("patch_size must be odd and >= 21")
    if feature_map_sizes(patch_size)[3] < 1:
        raise ValueError("patch_size too small for two conv/pool stages")
    rng = np.random.default_rng(seed)
    f, u = num_filters, fc_units
    flat = flattened_dim(patch_size, f)
    k2 = KERNEL * KERNEL
    params = {
        "conv1_weights": _glorot(rng, (f, 1, KERNEL, KERNEL), k2, f * k2, dtype),
        "conv1_bias": np.zeros(f, dtype=dtype),
        "conv2_weights": _glorot(rng, (f, f, KERNEL, KERNEL), f * k2, f * k2, dtype),
        "conv2_bias": np.zeros(f, dtype=dtype),
        "fc_weights": _glorot(rng, (u, flat), flat, u, dtype),
        "fc_bias": np.zeros(u, dtype=dtype),
        "out_weights": _glorot(rng, (2, u), u, 2, dtype),
        "out_bias": np.zeros(2, dtype=dtype),
    }
    velocities = {k: np.zeros_like(v) for k, v in params.items()}
    return CnnModel(params, velocities, patch_size, num_filters, fc_units)


# ---------------------------------------------------------------- layers


def _conv_forward(x, w, b):
    # x: (B, C, H, W), w: (F, C, k, k) -> (B, F, H-k+1, W-k+1), valid.
    B = x.shape[0]
    F = w.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(x, (KERNEL, KERNEL), axis=(2, 3))
    # win: (B, C, Ho, Wo, k, k)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, -1)
    out = cols @ w.reshape(F, -1).T + b
    return out.reshape(B, ho, wo, F).transpose(0, 3, 1, 2), cols


def _conv_backward(dy, cols, x_shape, w):
    # dy: (B, F, Ho, Wo); cols from forward.
    B, C, H, W = x_shape
    F = w.shape[0]
    ho, wo = dy.shape[2], dy.shape[3]
    dy_cols = dy.transpose(0, 2, 3, 1).reshape(-1, F)
    dw = (dy_cols.T @ cols).reshape(w.shape)
    db = dy_cols.sum(axis=0)
    dcols = dy_cols @ w.reshape(F, -1)
    # scatter columns back to the padded-free input
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dcols = dcols.reshape(B, ho, wo, C, KERNEL, KERNEL)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    return dx, dw, db


def _pool_forward(x):
    # 2x2 max pool, stride 2; odd trailing row/column is dropped.
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    xr = xc.reshape(B, C, h2, 2, w2, 2)
    flat = xr.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)
    arg = flat.argmax(axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    return out, arg


def _pool_backward(dy, arg, x_shape):
    B, C, H, W = x_shape
    h2, w2 = H // 2, W // 2
    dflat = np.zeros((B, C, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dflat, arg[..., None], dy[..., None], axis=4)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : 2 * h2, : 2 * w2] = (
        dflat.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            B, C, 2 * h2, 2 * w2
        )
    )
    return dx


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_patches(model, patches):
    patches = np.asarray(patches)
    if patches.ndim == 2:
        patches = patches[None]
    if patches.ndim != 3 or patches.shape[1:] != (model.patch_size, model.patch_size):
        raise ShapeError(
            f"expected patches of shape (*, {model.patch_size}, {model.patch_size}), "
            f"got {patches.shape}"
        )
    return patches


def _forward_pass(model, patches, want_cache=False):
    p = model.params
    dtype = p["conv1_weights"].dtype
    x = patches.astype(dtype, copy=False)[:, None]
    c1, cols1 = _conv_forward(x, p["conv1_weights"], p["conv1_bias"])
    r1 = np.maximum(c1, 0)
    p1, arg1 = _pool_forward(r1)
    c2, cols2 = _conv_forward(p1, p["conv2_weights"], p["conv2_bias"])
    r2 = np.maximum(c2, 0)
    p2, arg2 = _pool_forward(r2)
    flat = p2.reshape(p2.shape[0], -1)
    h = flat @ p["fc_weights"].T + p["fc_bias"]
    hr = np.maximum(h, 0)
    logits = hr @ p["out_weights"].T + p["out_bias"]
    probs = _softmax(logits)
    if not want_cache:
        return probs, None
    cache = dict(
        x=x, c1=c1, cols1=cols1, arg1=arg1, p1=p1, c2=c2, cols2=cols2,
        arg2=arg2, p2=p2, flat=flat, h=h, hr=hr, probs=probs,
    )
    return probs, cache


def forward_batch(model: CnnModel, patches: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (B, 2), rows summing to 1."""
    patches = _check_patches(model, patches)
    probs, _ = _forward_pass(model, patches)
    return probs


def forward(model: CnnModel, patch: np.ndarray) -> np.ndarray:
    """Class probabilities (2,) for a single patch."""
    return forward_batch(model, np.asarray(patch)[None])[0]


def backward_batch(model: CnnModel, patches, targets):
    """Mean cross-entropy loss and mean gradients over the batch."""
    patches = _check_patches(model, patches)
    targets = np.asarray(targets)
    if targets.shape != (patches.shape[0], 2):
        raise ShapeError(f"targets must be (B, 2), got {targets.shape}")
    p = model.params
    dtype = p["conv1_weights"].dtype
    targets = targets.astype(dtype, copy=False)
    probs, cache = _forward_pass(model, patches, want_cache=True)
    B = patches.shape[0]
    eps = np.finfo(dtype).tiny
    loss = float(-np.mean(np.sum(targets * np.log(probs + eps), axis=1)))

    dlogits = (probs - targets) / B
    grads = {}
    grads["out_weights"] = dlogits.T @ cache["hr"]
    grads["out_bias"] = dlogits.sum(axis=0)
    dhr = dlogits @ p["out_weights"]
    dh = dhr * (cache["h"] > 0)
    grads["fc_weights"] = dh.T @ cache["flat"]
    grads["fc_bias"] = dh.sum(axis=0)
    dflat = dh @ p["fc_weights"]
    dp2 = dflat.reshape(cache["p2"].shape)
    dr2 = _pool_backward(dp2, cache["arg2"], cache["c2"].shape)
    dc2 = dr2 * (cache["c2"] > 0)
    dp1, grads["conv2_weights"], grads["conv2_bias"] = _conv_backward(
        dc2, cache["cols2"], cache["p1"].shape, p["conv2_weights"]
    )
    dr1 = _pool_backward(dp1, cache["arg1"], cache["c1"].shape)
    dc1 = dr1 * (cache["c1"] > 0)
    _, grads["conv1_weights"], grads["conv1_bias"] = _conv_backward(
        dc1, cache["cols1"], cache["x"].shape, p["conv1_weights"]
    )
    return grads, loss


def backward(model: CnnModel, patch, target):
    """Gradients and loss for a single (patch, one-hot target) pair."""
    return backward_batch(model, np.asarray(patch)[None], np.asarray(target)[None])


def sgd_momentum_step(model: CnnModel, grads, cfg: SgdConfig) -> CnnModel:
    """v <- mu*v - lr*g; w <- w + v.  Returns a new model, revision + 1."""
    for name in PARAM_ORDER:
        g = grads[name]
        if g.shape != model.params[name].shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    new_v = {}
    new_p = {}
    for name in PARAM_ORDER:
        v = cfg.momentum * model.velocities[name] - cfg.learning_rate * grads[name]
        new_v[name] = v.astype(model.params[name].dtype, copy=False)
        new_p[name] = model.params[name] + new_v[name]
    return CnnModel(
        new_p,
        new_v,
        model.patch_size,
        model.num_filters,
        model.fc_units,
        model.validation_accuracy,
        model.revision + 1,
    )


# ---------------------------------------------------------------- checkpoints


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated file while reading {what}")
    return buf


def _read_array(fh, what):
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"{what} rank"))
    if rank > 4:
        raise CheckpointFormatError(f"bad rank {rank} for {what}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{what} dims"))
    count = int(np.prod(dims)) if rank else 1
    data = _read_exact(fh, 4 * count, f"{what} data")
    return np.frombuffer(data, dtype="<f4").reshape(dims).copy()


def save_checkpoint(model: CnnModel, path) -> None:
    """Atomic write (temp file + rename); 32-bit little-endian arrays."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(
                struct.pack(
                    "<IIIQd",
                    model.patch_size,
                    model.num_filters,
                    model.fc_units,
                    model.revision,
                    model.validation_accuracy,
                )
            )
            for name in PARAM_ORDER:
                _write_array(fh, model.params[name])
            for name in PARAM_ORDER:
                _write_array(fh, model.velocities[name])
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path) -> CnnModel:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported version {version}")
        patch_size, num_filters, fc_units, revision = struct.unpack(
            "<IIIQ", _read_exact(fh, 20, "header")
        )
        (val_acc,) = struct.unpack("<d", _read_exact(fh, 8, "validation_accuracy"))
        params = {name: _read_array(fh, name) for name in PARAM_ORDER}
        velocities = {
            name: _read_array(fh, f"velocity:{name}") for name in PARAM_ORDER
        }
    return CnnModel(
        params, velocities, patch_size, num_filters, fc_units, val_acc, revision
    )
