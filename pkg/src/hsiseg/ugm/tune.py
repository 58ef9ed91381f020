"""Validation-set grid search for the pairwise parameters (w1, theta_gamma)."""

import numpy as np

from ..errors import EmptyInputError
from .energy import EnergyModel, PairwiseParams
from .meanfield import meanfield_dense


def default_param_lattice(points_per_axis=7, low=1e-3, high=1e3):
    """Log-spaced lattice of (w1, theta_gamma) pairs, 49 cells by default."""
    values = np.logspace(np.log10(low), np.log10(high), points_per_axis)
    return [PairwiseParams(w1=float(a), theta_gamma=float(b))
            for a in values for b in values]


def _val_accuracy(pred_labels, truth_labels, val_pixels):
    rows = val_pixels[:, 0]
    cols = val_pixels[:, 1]
    return float(np.mean(pred_labels[rows, cols] == truth_labels[rows, cols]))


def tune_crf(unary, truth, val_pixels, grid=None, iterations=30):
    """Pick the lattice cell whose mean-field MAP scores best on val pixels.

    Ties resolve to the smaller w1, then the smaller theta_gamma.  The
    search is deterministic for fixed inputs.
    """
    val_pixels = np.asarray(val_pixels)
    if val_pixels.size == 0:
        raise EmptyInputError("validation set is empty")
    if grid is None:
        grid = default_param_lattice()
    grid = list(grid)
    if not grid:
        raise EmptyInputError("parameter grid is empty")

    unary = np.asarray(unary, dtype=np.float64)
    best_params = None
    best_accuracy = -1.0
    for params in sorted(grid, key=lambda p: (p.w1, p.theta_gamma)):
        model = EnergyModel(unary=unary, pairwise=params, structure="dense")
        q = meanfield_dense(model, iterations=iterations)
        pred = np.argmax(q, axis=2).astype(np.int32) + 1
        accuracy = _val_accuracy(pred, truth.labels, val_pixels)
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_params = params
    return best_params
