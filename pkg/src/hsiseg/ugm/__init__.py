"""Undirected graphical models over pixel labels.

Pairwise energy between pixels i and j is zero when their labels agree and
``w1 * exp(-||p_i - p_j||^2 / (2 * theta_gamma^2))`` otherwise, where p are
(row, col) coordinates.  Two graph structures are supported: ``grid4``
(4-connected neighbors, minimized by ICM or alpha-expansion via max-flow)
and ``dense`` (an edge between every pixel pair, approximated by parallel
mean-field updates).
"""

from .energy import (
    EnergyModel,
    PairwiseParams,
    grid_edge_weight,
    map_from_marginals,
    pairwise_energy,
    total_energy,
    unary_argmin_labels,
    unary_from_proba,
)
from .grid import alpha_expansion, icm, solve_binary_submodular
from .maxflow import FlowNetwork
from .meanfield import meanfield_dense, meanfield_marginals
from .tune import default_param_lattice, tune_crf

__all__ = [
    "EnergyModel",
    "FlowNetwork",
    "PairwiseParams",
    "alpha_expansion",
    "default_param_lattice",
    "grid_edge_weight",
    "icm",
    "map_from_marginals",
    "meanfield_dense",
    "meanfield_marginals",
    "pairwise_energy",
    "solve_binary_submodular",
    "total_energy",
    "tune_crf",
    "unary_argmin_labels",
    "unary_from_proba",
]
