"""Energy model over pixel labelings: unary field plus spatial pairwise term."""

import math
from dataclasses import dataclass

import numpy as np

from ..datacube import LabelMap
from ..errors import InvalidLabelingError

STRUCTURES = ("grid4", "dense")


@dataclass
class PairwiseParams:
    """Scalar pairwise parameters: interaction strength and spatial scale."""

    w1: float
    theta_gamma: float

    def __post_init__(self):
        if self.w1 < 0:
            raise ValueError("w1 must be >= 0")
        if self.theta_gamma <= 0:
            raise ValueError("theta_gamma must be > 0")


@dataclass
class EnergyModel:
    """Per-pixel label costs plus pairwise parameters on a graph structure.

    unary[r, c, k] is the cost of assigning class k+1 to pixel (r, c).
    """

    unary: np.ndarray  # (height, width, num_classes) float64
    pairwise: PairwiseParams
    structure: str  # "grid4" | "dense"

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if self.unary.ndim != 3:
            raise ValueError("unary field must be (height, width, classes)")
        if not np.all(np.isfinite(self.unary)):
            raise ValueError("unary field contains non-finite energies")
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")

    @property
    def height(self):
        return self.unary.shape[0]

    @property
    def width(self):
        return self.unary.shape[1]

    @property
    def num_classes(self):
        return self.unary.shape[2]


def unary_from_proba(proba, clamp=1e-12):
    """Unary energies as -log of clamped classifier probabilities."""
    proba = np.asarray(proba, dtype=np.float64)
    if clamp <= 0:
        raise ValueError("clamp must be positive")
    return -np.log(np.maximum(proba, clamp))


def pairwise_energy(pi, pj, yi, yj, params):
    """Energy of labeling pixels at coordinates pi and pj with yi and yj."""
    if yi == yj:
        return 0.0
    dr = float(pi[0]) - float(pj[0])
    dc = float(pi[1]) - float(pj[1])
    dist2 = dr * dr + dc * dc
    return params.w1 * math.exp(-dist2 / (2.0 * params.theta_gamma ** 2))


def grid_edge_weight(params):
    """Pairwise weight of a 4-neighbor edge (all such pairs sit at distance 1)."""
    return params.w1 * math.exp(-1.0 / (2.0 * params.theta_gamma ** 2))


def _check_full_labeling(labeling, model):
    labels = labeling.labels
    if labels.shape != (model.height, model.width):
        raise InvalidLabelingError(
            f"labeling shape {labels.shape} != unary {(model.height, model.width)}"
        )
    if labels.min() < 1 or labels.max() > model.num_classes:
        raise InvalidLabelingError("labeling must assign a class in 1..C everywhere")
    return labels


def total_energy(labeling, model):
    """Sum of selected unary energies plus pairwise energies over all edges.

    Each undirected edge is counted once.  The dense variant is a reference
    implementation that touches every pixel pair; use it on small images.
    """
    labels = _check_full_labeling(labeling, model)
    h, w = labels.shape
    idx = labels - 1
    unary = np.take_along_axis(model.unary, idx[:, :, None], axis=2)[:, :, 0].sum()

    params = model.pairwise
    if model.structure == "grid4":
        weight = grid_edge_weight(params)
        mismatch = (labels[:, :-1] != labels[:, 1:]).sum()
        mismatch += (labels[:-1, :] != labels[1:, :]).sum()
        return float(unary + weight * mismatch)

    # dense: accumulate over unordered pairs in row blocks to bound memory.
    coords = np.argwhere(np.ones((h, w), dtype=bool)).astype(np.float64)
    flat = labels.reshape(-1)
    n = flat.size
    inv_two_theta2 = 1.0 / (2.0 * params.theta_gamma ** 2)
    pair_sum = 0.0
    block = 2048
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = ((coords[start:stop, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
        kern = np.exp(-d2 * inv_two_theta2)
        differ = flat[start:stop, None] != flat[None, :]
        contrib = (kern * differ)
        # Keep j > i only so each unordered pair is counted once.
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        pair_sum += contrib[cols > rows].sum()
    return float(unary + params.w1 * pair_sum)


def unary_argmin_labels(unary):
    """Labeling that independently minimizes each pixel's unary energy."""
    unary = np.asarray(unary, dtype=np.float64)
    return LabelMap.from_array(
        np.argmin(unary, axis=2).astype(np.int32) + 1, num_classes=unary.shape[2]
    )


def map_from_marginals(q):
    """Per-pixel argmax labeling of a probability field; ties go to the
    lowest class index."""
    q = np.asarray(q, dtype=np.float64)
    return LabelMap.from_array(
        np.argmax(q, axis=2).astype(np.int32) + 1, num_classes=q.shape[2]
    )
