"""Multilayer-perceptron pixel classifier with Nadam training.

Architecture: input -> `hidden_layers` ReLU layers of `units` each ->
softmax over classes.  The training loss is mean cross-entropy plus
(weight_decay / 2) * sum ||W||^2 over the classifier weight matrices
(biases excluded).  An optional auxiliary reconstruction head (a linear
decoder from the last hidden layer back to the input, weighted by
`aux_weight`) can be enabled as a hook for semi-supervised variants;
it defaults to off.

Labels are 1-based everywhere (class 0 means unlabeled and never reaches
the classifier).  Training runs in float64; stored weights are float32.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .datacube import FeatureCube
from .errors import (
    DimensionError,
    EmptyInputError,
    NoViableModelError,
    TrainingDivergedError,
)
from .optim import NadamState, nadam_step

_PREDICT_CHUNK = 16384


@dataclass
class MlpSpec:
    """Classifier hyperparameters; ranges follow the tuning protocol."""

    input_dim: int
    num_classes: int
    hidden_layers: int = 2
    units: int = 64
    weight_decay: float = 0.0
    aux_weight: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 2 <= self.hidden_layers <= 10:
            raise ValueError("hidden_layers must lie in [2, 10]")
        if not 64 <= self.units <= 3000:
            raise ValueError("units must lie in [64, 3000]")
        if self.weight_decay < 0 or self.aux_weight < 0:
            raise ValueError("weight_decay and aux_weight must be >= 0")

    @property
    def layer_dims(self):
        dims = [self.input_dim]
        dims.extend([self.units] * self.hidden_layers)
        dims.append(self.num_classes)
        return dims

    @property
    def n_params(self):
        dims = self.layer_dims
        total = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        if self.aux_weight > 0:
            total += self.units * self.input_dim + self.input_dim
        return total


@dataclass
class TrainedMlp:
    """Layer weights plus the training history that produced them."""

    spec: MlpSpec
    weights: list  # per layer (d_in, d_out)
    biases: list  # per layer (d_out,)
    aux_weights: np.ndarray = None  # (units, input_dim) when aux head is on
    aux_biases: np.ndarray = None
    history: list = field(default_factory=list)  # (epoch, train, val, lr)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stop_reason: str = "untrained"


def _float64_params(model):
    ws = [np.asarray(w, dtype=np.float64) for w in model.weights]
    bs = [np.asarray(b, dtype=np.float64) for b in model.biases]
    aux = None
    if model.aux_weights is not None:
        aux = (
            np.asarray(model.aux_weights, dtype=np.float64),
            np.asarray(model.aux_biases, dtype=np.float64),
        )
    return ws, bs, aux


def _init_model(spec, rng):
    dims = spec.layer_dims
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        ws.append(rng.uniform(-bound, bound, (d_in, d_out)))
        bs.append(np.zeros(d_out))
    aux_w = aux_b = None
    if spec.aux_weight > 0:
        bound = np.sqrt(6.0 / spec.units)
        aux_w = rng.uniform(-bound, bound, (spec.units, spec.input_dim))
        aux_b = np.zeros(spec.input_dim)
    return TrainedMlp(spec=spec, weights=ws, biases=bs,
                      aux_weights=aux_w, aux_biases=aux_b)


def _forward_pass(ws, bs, x):
    """Returns (probabilities, hidden activations including input)."""
    acts = [x]
    value = x
    for w, b in zip(ws[:-1], bs[:-1]):
        value = np.maximum(value @ w + b, 0.0)
        acts.append(value)
    logits = value @ ws[-1] + bs[-1]
    logits = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True), acts


def forward(model, batch):
    """Class probabilities for a feature matrix, rows on the simplex."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"batch shape {batch.shape} does not match input_dim "
            f"{model.spec.input_dim}"
        )
    ws, bs, _ = _float64_params(model)
    probs, _ = _forward_pass(ws, bs, batch)
    return probs


def mean_cross_entropy(model, batch, labels):
    """Monitoring loss: mean negative log-probability of the true class."""
    probs = forward(model, batch)
    labels = np.asarray(labels)
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def gradients(model, batch, labels):
    """Loss and parameter gradients of the full training objective.

    The objective is mean cross-entropy + (weight_decay/2) * sum ||W||^2
    over classifier weights, plus aux_weight * MSE(decoder(h_last), batch)
    when the auxiliary head is enabled.  Returns (grads, loss) with grads
    a dict of lists parallel to the model's parameter lists.
    """
    spec = model.spec
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 1 or labels.max() > spec.num_classes:
        raise ValueError("labels must lie in 1..num_classes")
    ws, bs, aux = _float64_params(model)
    n = batch.shape[0]

    probs, acts = _forward_pass(ws, bs, batch)
    picked = probs[np.arange(n), labels - 1]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    loss += 0.5 * spec.weight_decay * sum(float((w ** 2).sum()) for w in ws)

    # Softmax + cross-entropy: d logits = (p - onehot) / n.
    d_logits = probs.copy()
    d_logits[np.arange(n), labels - 1] -= 1.0
    d_logits /= n

    d_ws = [None] * len(ws)
    d_bs = [None] * len(bs)
    d_aux_w = d_aux_b = None

    d_ws[-1] = acts[-1].T @ d_logits + spec.weight_decay * ws[-1]
    d_bs[-1] = d_logits.sum(axis=0)
    d_hidden = d_logits @ ws[-1].T

    if aux is not None and spec.aux_weight > 0:
        aux_w, aux_b = aux
        recon = acts[-1] @ aux_w + aux_b
        diff = recon - batch
        loss += spec.aux_weight * float((diff ** 2).mean())
        d_recon = spec.aux_weight * 2.0 * diff / diff.size
        d_aux_w = acts[-1].T @ d_recon
        d_aux_b = d_recon.sum(axis=0)
        d_hidden = d_hidden + d_recon @ aux_w.T

    for layer in range(len(ws) - 2, -1, -1):
        d_pre = d_hidden * (acts[layer + 1] > 0.0)
        d_ws[layer] = acts[layer].T @ d_pre + spec.weight_decay * ws[layer]
        d_bs[layer] = d_pre.sum(axis=0)
        if layer > 0:
            d_hidden = d_pre @ ws[layer].T

    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss became non-finite ({loss})")
    grads = {"weights": d_ws, "biases": d_bs}
    if d_aux_w is not None:
        grads["aux"] = (d_aux_w, d_aux_b)
    return grads, loss


def train(spec, train_x, train_y, val_x, val_y, seed=0, max_epochs=500,
          batch_size=8, learning_rate=0.002, stop_patience=50,
          plateau_patience=10, min_learning_rate=2e-6):
    """Mini-batch Nadam training with plateau LR drops and early stopping.

    Batches of 8 are drawn in a freshly shuffled order each epoch.  The
    monitored quantity is mean cross-entropy on the validation set: when
    it fails to improve for `plateau_patience` consecutive epochs the
    learning rate is divided by 10 (floored at `min_learning_rate`), and
    after `stop_patience` epochs without improvement training stops.  The
    returned model carries the weights of the best validation epoch.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    val_y = np.asarray(val_y)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise EmptyInputError("training and validation sets must be non-empty")

    rng = np.random.default_rng(seed)
    model = _init_model(spec, rng)
    flat_params = list(model.weights) + list(model.biases)
    if model.aux_weights is not None:
        flat_params += [model.aux_weights, model.aux_biases]
    state = NadamState(learning_rate=learning_rate)

    best_val = math.inf
    best_epoch = -1
    best_snapshot = None
    since_improvement = 0
    n = train_x.shape[0]
    history = []
    stop_reason = "max_epochs"

    for epoch in range(max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads, loss = gradients(model, train_x[idx], train_y[idx])
            batch_losses.append(loss)
            flat_grads = list(grads["weights"]) + list(grads["biases"])
            if "aux" in grads:
                flat_grads += list(grads["aux"])
            nadam_step(state, flat_params, flat_grads)

        train_loss = float(np.mean(batch_losses))
        val_loss = mean_cross_entropy(model, val_x, val_y)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError("validation loss became non-finite")
        history.append((epoch, train_loss, val_loss, state.learning_rate))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = (
                [w.copy() for w in model.weights],
                [b.copy() for b in model.biases],
                None if model.aux_weights is None
                else (model.aux_weights.copy(), model.aux_biases.copy()),
            )
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= stop_patience:
                stop_reason = "early_stop"
                break
            if since_improvement % plateau_patience == 0:
                state.learning_rate = max(
                    state.learning_rate * 0.1, min_learning_rate
                )

    ws, bs, aux = best_snapshot
    return TrainedMlp(
        spec=spec,
        weights=[w.astype(np.float32) for w in ws],
        biases=[b.astype(np.float32) for b in bs],
        aux_weights=None if aux is None else aux[0].astype(np.float32),
        aux_biases=None if aux is None else aux[1].astype(np.float32),
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        stop_reason=stop_reason,
    )


def default_mlp_grid(input_dim, num_classes):
    """Small hyperparameter lattice searched per trial."""
    return [
        MlpSpec(input_dim=input_dim, num_classes=num_classes,
                hidden_layers=hidden, units=units, weight_decay=decay)
        for hidden in (2, 3)
        for units in (64, 256, 1024)
        for decay in (0.0, 1e-4, 1e-3)
    ]


def cross_validate(grid, train_x, train_y, val_x, val_y, seed=0, **train_kwargs):
    """Train every spec in the grid; return (best spec, its trained model).

    Ranked by best validation loss; ties prefer fewer parameters, then
    earlier grid position.  Candidates that diverge are dropped; if all
    of them diverge there is no viable model.
    """
    grid = list(grid)
    if not grid:
        raise EmptyInputError("hyperparameter grid is empty")
    best = None
    for position, spec in enumerate(grid):
        try:
            model = train(spec, train_x, train_y, val_x, val_y, seed=seed,
                          **train_kwargs)
        except TrainingDivergedError:
            continue
        key = (model.best_val_loss, spec.n_params, position)
        if best is None or key < best[0]:
            best = (key, spec, model)
    if best is None:
        raise NoViableModelError("every candidate in the grid diverged")
    return best[1], best[2]


def predict_proba(model, features):
    """Per-pixel class probabilities over a whole feature cube."""
    if isinstance(features, FeatureCube):
        values = features.values
    else:
        values = np.asarray(features)
    if values.ndim != 3 or values.shape[2] != model.spec.input_dim:
        raise DimensionError(
            f"feature cube shape {values.shape} does not match input_dim "
            f"{model.spec.input_dim}"
        )
    h, w, d = values.shape
    flat = values.reshape(-1, d)
    out = np.empty((h * w, model.spec.num_classes))
    for start in range(0, flat.shape[0], _PREDICT_CHUNK):
        stop = min(start + _PREDICT_CHUNK, flat.shape[0])
        out[start:stop] = forward(model, flat[start:stop])
    return out.reshape(h, w, model.spec.num_classes)
