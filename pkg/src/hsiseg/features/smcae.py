"""Stacked multi-loss convolutional autoencoder over spectral patches.

The encoder stacks stride-1 convolutions (ReLU, mirror padding) with 2x
average pooling between layers; the decoder mirrors it with nearest-
neighbor unpooling, ReLU on inner layers and a linear outermost layer.
The training objective is a weighted sum of reconstruction losses, one
per symmetric encoder-decoder pair:

    L = sum_l lam[l] * MSE(r_l, u_l)

where u_l is the input of encoder layer l and r_l the output of its
decoder twin.  lam[0] weighs the outermost pair (input reconstruction),
so lam = (1, 0, ..., 0) is the ordinary single-loss stacked autoencoder.
Gradients follow the full computational graph: inner targets u_l depend
on encoder weights and that dependence is not detached.

Everything runs in float64 numpy; trained weights are stored float32.
"""

from dataclasses import dataclass, field

import numpy as np

from ..datacube import FeatureCube
from ..errors import DimensionError, InsufficientSamplesError, TrainingDivergedError
from ..optim import NadamState, nadam_step


@dataclass
class SmcaeSpec:
    """Architecture and training schedule of the autoencoder."""

    channels: tuple = (32, 64, 128)
    kernel_size: int = 3
    loss_weights: tuple = (1.0, 1.0, 1.0)
    patch_size: int = 16
    n_patches: int = 120
    batch_size: int = 8
    epochs: int = 30
    learning_rate: float = 1e-3
    feature_mode: str = "concat"  # "concat" | "final"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be positive counts")
        if len(self.loss_weights) != len(self.channels):
            raise ValueError("need one loss weight per encoder layer")
        if any(w < 0 for w in self.loss_weights) or not any(self.loss_weights):
            raise ValueError("loss weights must be >= 0 with at least one > 0")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and positive")
        if self.patch_size % self.pool_factor:
            raise ValueError(
                f"patch_size must be a multiple of {self.pool_factor}"
            )
        if self.feature_mode not in ("concat", "final"):
            raise ValueError("feature_mode must be 'concat' or 'final'")

    @property
    def depth(self):
        return len(self.channels)

    @property
    def pool_factor(self):
        return 2 ** (self.depth - 1)

    @property
    def feature_dim(self):
        if self.feature_mode == "final":
            return self.channels[-1]
        return sum(self.channels)


@dataclass
class SmcaeModel:
    """Trained encoder/decoder weights plus the training loss trajectory."""

    spec: SmcaeSpec
    n_bands: int
    enc_weights: list  # per layer (C_l, k, k, C_{l-1}) float32
    enc_biases: list
    dec_weights: list  # per layer (C_{l-1}, k, k, C_l) float32
    dec_biases: list
    loss_history: list = field(default_factory=list)


def _reflect_indices(n, pad):
    if pad == 0:
        return np.arange(n)
    if pad > n - 1:
        raise DimensionError(f"cannot mirror-pad extent {n} by {pad}")
    left = np.arange(pad, 0, -1)
    right = np.arange(n - 2, n - 2 - pad, -1)
    return np.concatenate([left, np.arange(n), right])


def _conv_forward(x, weights, bias):
    """Stride-1 correlation with mirror padding; returns (out, cache)."""
    k = weights.shape[1]
    radius = k // 2
    h, w, _ = x.shape
    rows = _reflect_indices(h, radius)
    cols = _reflect_indices(w, radius)
    padded = x[rows][:, cols]
    out = np.broadcast_to(bias, (h, w, bias.size)).copy()
    for dr in range(k):
        for dc in range(k):
            out += padded[dr : dr + h, dc : dc + w, :] @ weights[:, dr, dc, :].T
    return out, (padded, rows, cols, x.shape)


def _conv_backward(d_out, weights, cache):
    padded, rows, cols, x_shape = cache
    k = weights.shape[1]
    h, w, _ = x_shape
    d_w = np.zeros_like(weights)
    d_b = d_out.sum(axis=(0, 1))
    d_padded = np.zeros_like(padded)
    flat_out = d_out.reshape(-1, d_out.shape[2])
    for dr in range(k):
        for dc in range(k):
            segment = padded[dr : dr + h, dc : dc + w, :]
            d_w[:, dr, dc, :] = flat_out.T @ segment.reshape(-1, segment.shape[2])
            d_padded[dr : dr + h, dc : dc + w, :] += d_out @ weights[:, dr, dc, :]
    d_x = np.zeros(x_shape)
    np.add.at(d_x, (rows[:, None], cols[None, :]), d_padded)
    return d_x, d_w, d_b


def _avgpool(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _avgpool_backward(d_out):
    return np.repeat(np.repeat(d_out, 2, axis=0), 2, axis=1) / 4.0


def _unpool(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def _unpool_backward(d_out):
    h, w, c = d_out.shape
    return d_out.reshape(h // 2, 2, w // 2, 2, c).sum(axis=(1, 3))


def _forward(params, x):
    """Full encoder/decoder pass; returns (pair losses, caches)."""
    enc_w, enc_b = params["enc_w"], params["enc_b"]
    dec_w, dec_b = params["dec_w"], params["dec_b"]
    depth = len(enc_w)

    targets = [x]  # u_l: input of encoder layer l
    pre_enc, act_enc = [], []
    value = x
    for layer in range(depth):
        pre, cache = _conv_forward(value, enc_w[layer], enc_b[layer])
        pre_enc.append((pre, cache))
        value = np.maximum(pre, 0.0)
        act_enc.append(value)
        if layer < depth - 1:
            value = _avgpool(value)
            targets.append(value)

    recons = [None] * depth
    pre_dec = [None] * depth
    value = act_enc[-1]
    for layer in range(depth - 1, -1, -1):
        pre, cache = _conv_forward(value, dec_w[layer], dec_b[layer])
        pre_dec[layer] = (pre, cache)
        recons[layer] = np.maximum(pre, 0.0) if layer > 0 else pre
        if layer > 0:
            value = _unpool(recons[layer])

    losses = [float(np.mean((r - u) ** 2)) for r, u in zip(recons, targets)]
    caches = {
        "targets": targets,
        "pre_enc": pre_enc,
        "act_enc": act_enc,
        "pre_dec": pre_dec,
        "recons": recons,
    }
    return losses, caches


def _backward(params, lam, caches):
    """Gradient of sum_l lam[l] * MSE(r_l, u_l) for every parameter."""
    enc_w = params["enc_w"]
    dec_w = params["dec_w"]
    depth = len(enc_w)
    targets = caches["targets"]
    recons = caches["recons"]
    pre_enc = caches["pre_enc"]
    pre_dec = caches["pre_dec"]

    d_recon = [
        lam[l] * 2.0 * (recons[l] - targets[l]) / recons[l].size
        for l in range(depth)
    ]
    d_target = [
        -lam[l] * 2.0 * (recons[l] - targets[l]) / recons[l].size
        for l in range(depth)
    ]

    grads = {
        "enc_w": [None] * depth, "enc_b": [None] * depth,
        "dec_w": [None] * depth, "dec_b": [None] * depth,
    }

    # Decoder chain, outermost pair first: r_0 <- r_1 <- ... <- r_{L-1}.
    d_deep_act = None
    for layer in range(depth):
        d_pre = d_recon[layer]
        if layer > 0:
            d_pre = d_pre * (pre_dec[layer][0] > 0.0)
        d_in, d_w, d_b = _conv_backward(d_pre, dec_w[layer], pre_dec[layer][1])
        grads["dec_w"][layer] = d_w
        grads["dec_b"][layer] = d_b
        if layer < depth - 1:
            d_recon[layer + 1] = d_recon[layer + 1] + _unpool_backward(d_in)
        else:
            d_deep_act = d_in

    # Encoder chain, deepest layer first; targets feed both the losses and
    # the next convolution, so their gradients merge here.
    d_act = d_deep_act
    for layer in range(depth - 1, -1, -1):
        d_pre = d_act * (pre_enc[layer][0] > 0.0)
        d_in, d_w, d_b = _conv_backward(d_pre, enc_w[layer], pre_enc[layer][1])
        grads["enc_w"][layer] = d_w
        grads["enc_b"][layer] = d_b
        if layer > 0:
            d_pooled = d_in + d_target[layer]
            d_act = _avgpool_backward(d_pooled)
    return grads


def loss_and_grads(params, batch, lam):
    """Mean loss and gradients over a list of patches."""
    depth = len(params["enc_w"])
    total = 0.0
    acc = None
    for patch in batch:
        losses, caches = _forward(params, patch)
        total += sum(w * l for w, l in zip(lam, losses))
        grads = _backward(params, lam, caches)
        if acc is None:
            acc = grads
        else:
            for key in acc:
                for layer in range(depth):
                    acc[key][layer] += grads[key][layer]
    scale = 1.0 / len(batch)
    for key in acc:
        for layer in range(depth):
            acc[key][layer] *= scale
    return total * scale, acc


def _init_params(spec, n_bands, rng):
    k = spec.kernel_size
    widths = (n_bands,) + spec.channels
    params = {"enc_w": [], "enc_b": [], "dec_w": [], "dec_b": []}
    for layer in range(spec.depth):
        c_in, c_out = widths[layer], widths[layer + 1]
        bound = np.sqrt(6.0 / (k * k * c_in))
        params["enc_w"].append(rng.uniform(-bound, bound, (c_out, k, k, c_in)))
        params["enc_b"].append(np.zeros(c_out))
        bound = np.sqrt(6.0 / (k * k * c_out))
        params["dec_w"].append(rng.uniform(-bound, bound, (c_in, k, k, c_out)))
        params["dec_b"].append(np.zeros(c_in))
    return params


def _param_list(params):
    out = []
    for key in ("enc_w", "enc_b", "dec_w", "dec_b"):
        out.extend(params[key])
    return out


def train_smcae(cube, spec=None, seed=0):
    """Fit the autoencoder on random patches of the cube.

    Patches are sampled once, then swept in shuffled mini-batches for the
    configured number of epochs under Nadam.  A non-finite loss aborts
    with a training-diverged error.
    """
    spec = SmcaeSpec() if spec is None else spec
    h, w, bands = cube.values.shape
    p = spec.patch_size
    if h < p or w < p:
        raise InsufficientSamplesError(
            f"cube {h}x{w} too small for {p}x{p} training patches"
        )
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - p + 1, size=spec.n_patches)
    cols = rng.integers(0, w - p + 1, size=spec.n_patches)
    patches = [
        cube.values[r : r + p, c : c + p, :].astype(np.float64)
        for r, c in zip(rows, cols)
    ]

    params = _init_params(spec, bands, rng)
    flat = _param_list(params)
    state = NadamState(learning_rate=spec.learning_rate)
    lam = spec.loss_weights
    history = []
    for _ in range(spec.epochs):
        order = rng.permutation(spec.n_patches)
        epoch_losses = []
        for start in range(0, spec.n_patches, spec.batch_size):
            batch = [patches[i] for i in order[start : start + spec.batch_size]]
            loss, grads = loss_and_grads(params, batch, lam)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"autoencoder loss became non-finite ({loss})"
                )
            nadam_step(state, flat, _param_list(grads))
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))

    return SmcaeModel(
        spec=spec,
        n_bands=bands,
        enc_weights=[w_.astype(np.float32) for w_ in params["enc_w"]],
        enc_biases=[b.astype(np.float32) for b in params["enc_b"]],
        dec_weights=[w_.astype(np.float32) for w_ in params["dec_w"]],
        dec_biases=[b.astype(np.float32) for b in params["dec_b"]],
        loss_history=history,
    )


def reconstruction_losses(model, patch):
    """Per-pair reconstruction MSEs of a trained model on one patch."""
    params = {
        "enc_w": [w.astype(np.float64) for w in model.enc_weights],
        "enc_b": [b.astype(np.float64) for b in model.enc_biases],
        "dec_w": [w.astype(np.float64) for w in model.dec_weights],
        "dec_b": [b.astype(np.float64) for b in model.dec_biases],
    }
    losses, _ = _forward(params, np.asarray(patch, dtype=np.float64))
    return losses


def encode_smcae(cube, model):
    """Encoder activations of every pixel as a feature cube.

    The cube is mirror padded to a multiple of the total pooling factor,
    passed through the encoder, and each layer's activations are upsampled
    back to full resolution.  feature_mode "concat" stacks all layers
    (dim = sum of channel counts); "final" keeps only the deepest layer.
    """
    spec = model.spec
    if cube.bands != model.n_bands:
        raise DimensionError(
            f"cube has {cube.bands} bands, model expects {model.n_bands}"
        )
    h, w, _ = cube.values.shape
    factor = spec.pool_factor
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    rows = np.arange(h)
    if pad_h:
        if pad_h > h - 1:
            raise DimensionError(f"cube height {h} too small for depth {spec.depth}")
        rows = np.concatenate([rows, np.arange(h - 2, h - 2 - pad_h, -1)])
    cols = np.arange(w)
    if pad_w:
        if pad_w > w - 1:
            raise DimensionError(f"cube width {w} too small for depth {spec.depth}")
        cols = np.concatenate([cols, np.arange(w - 2, w - 2 - pad_w, -1)])
    value = cube.values[rows][:, cols].astype(np.float64)

    maps = []
    for layer in range(spec.depth):
        weights = model.enc_weights[layer].astype(np.float64)
        bias = model.enc_biases[layer].astype(np.float64)
        pre, _ = _conv_forward(value, weights, bias)
        act = np.maximum(pre, 0.0)
        upsampled = act
        for _ in range(layer):
            upsampled = _unpool(upsampled)
        maps.append(upsampled[:h, :w, :])
        if layer < spec.depth - 1:
            value = _avgpool(act)

    if spec.feature_mode == "final":
        features = maps[-1]
    else:
        features = np.concatenate(maps, axis=2)
    return FeatureCube(features.astype(np.float32))
