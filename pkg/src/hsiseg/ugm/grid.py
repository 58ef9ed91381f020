"""MAP inference on 4-connected grid energy models.

Two minimizers: iterated conditional modes (greedy coordinate descent in
raster order) and alpha-expansion, which reduces each move to a binary
submodular problem solved exactly by min-cut.  On the grid every neighbor
pair sits at distance 1, so the pairwise term is a Potts potential with
constant edge weight and every expansion subproblem is submodular.
"""

import numpy as np

from ..datacube import LabelMap
from ..errors import GraphConstructionError
from .energy import _check_full_labeling, grid_edge_weight, total_energy
from .maxflow import FlowNetwork

# Tolerance below which a negative submodularity slack is treated as round-off.
_BETA_EPS = 1e-12


def _require_grid(model):
    if model.structure != "grid4":
        raise ValueError("inference on explicit labelings requires grid4 structure")


def _grid4_edges(height, width):
    """(m, 2) array of flat pixel ids for all horizontal/vertical neighbor pairs."""
    ids = np.arange(height * width).reshape(height, width)
    horiz = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    vert = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert]).astype(np.int64)


def icm(model, init, max_sweeps=100):
    """Greedy per-pixel label descent; stops when a sweep changes nothing.

    Pixels are visited in raster order and moved to the label minimizing
    unary cost plus Potts disagreement with the current 4-neighborhood.
    A pixel only moves on a strict improvement, so the total energy is
    non-increasing and the sweep loop terminates.
    """
    _require_grid(model)
    labels = _check_full_labeling(init, model)
    h, w = labels.shape
    weight = grid_edge_weight(model.pairwise)
    unary = model.unary

    # Zero border sentinel: a 0 neighbor matches no class, shifting every
    # candidate cost by the same amount, which leaves the argmin unchanged.
    pad = np.zeros((h + 2, w + 2), dtype=np.int32)
    pad[1:-1, 1:-1] = labels

    for _ in range(max_sweeps):
        changed = False
        for r in range(h):
            for c in range(w):
                costs = unary[r, c].copy()
                for neighbor in (
                    pad[r, c + 1],
                    pad[r + 2, c + 1],
                    pad[r + 1, c],
                    pad[r + 1, c + 2],
                ):
                    if neighbor > 0:
                        costs[neighbor - 1] -= weight
                current = pad[r + 1, c + 1]
                best = int(np.argmin(costs))
                if costs[best] < costs[current - 1]:
                    pad[r + 1, c + 1] = best + 1
                    changed = True
        if not changed:
            break
    return LabelMap.from_array(pad[1:-1, 1:-1].copy(), num_classes=model.num_classes)


def solve_binary_submodular(cost0, cost1, edges, theta00, theta01, theta10, theta11):
    """Exact minimizer of a pairwise binary energy via min-cut.

    Minimizes sum_i [cost0_i (1-x_i) + cost1_i x_i] plus, for each edge
    (i, j), the table value theta_{x_i x_j}.  Each table is rewritten as
    a constant, linear terms folded into the t-links, and a single
    directed-edge term beta * x_i (1 - x_j) with
    beta = theta01 + theta10 - theta00 - theta11, which must be >= 0
    (submodularity); node i sits on the sink side of the cut iff x_i = 1.

    Returns (x, energy) with x a boolean array and energy the exact minimum.
    """
    cost0 = np.asarray(cost0, dtype=np.float64)
    cost1 = np.asarray(cost1, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64)
    n = cost0.size
    if cost1.size != n:
        raise ValueError("cost0 and cost1 must have equal length")
    if edges.size == 0:
        edges = edges.reshape(0, 2)

    theta00 = np.broadcast_to(np.asarray(theta00, np.float64), (len(edges),))
    theta01 = np.broadcast_to(np.asarray(theta01, np.float64), (len(edges),))
    theta10 = np.broadcast_to(np.asarray(theta10, np.float64), (len(edges),))
    theta11 = np.broadcast_to(np.asarray(theta11, np.float64), (len(edges),))

    beta = theta01 + theta10 - theta00 - theta11
    if np.any(beta < -_BETA_EPS):
        worst = float(beta.min())
        raise GraphConstructionError(
            f"non-submodular pairwise table (slack {worst:.3e} < 0)"
        )
    beta = np.maximum(beta, 0.0)

    # Fold the per-edge linear terms into node costs:
    # E_ij = theta00 + (theta11-theta01) x_i + (theta01-theta00) x_j
    #        + beta x_i (1-x_j)
    take1 = cost1.copy()
    take0 = cost0.copy()
    np.add.at(take1, edges[:, 0], theta11 - theta01)
    np.add.at(take1, edges[:, 1], theta01 - theta00)
    offset = float(theta00.sum())

    # Shift each node pair of t-link costs to be non-negative.
    shift = np.minimum(take0, take1)
    offset += float(shift.sum())
    to_sink_cap = take0 - shift  # cut when x_i = 0
    from_source_cap = take1 - shift  # cut when x_i = 1

    source = n
    sink = n + 1
    net = FlowNetwork(n + 2)
    for i in range(n):
        if from_source_cap[i] > 0:
            net.add_edge(source, i, from_source_cap[i])
        if to_sink_cap[i] > 0:
            net.add_edge(i, sink, to_sink_cap[i])
    for k in range(len(edges)):
        if beta[k] > 0:
            net.add_edge(int(edges[k, 1]), int(edges[k, 0]), beta[k])

    flow = net.max_flow(source, sink)
    x = ~net.source_side(source)[:n]
    return x, offset + flow


def alpha_expansion(model, init, max_cycles=10):
    """Cycle expansion moves over all labels until none lowers the energy.

    Each move fixes a label alpha and solves, exactly, the binary problem
    of which pixels switch to alpha (x=1) versus keep their current label
    (x=0).  Moves are accepted only on strict energy decrease, so the
    energy never increases and the cycle loop terminates.
    """
    _require_grid(model)
    labels = _check_full_labeling(init, model).copy()
    h, w = labels.shape
    n_classes = model.num_classes
    weight = grid_edge_weight(model.pairwise)
    edges = _grid4_edges(h, w)
    unary_flat = model.unary.reshape(-1, n_classes)
    pixel_ids = np.arange(h * w)

    current = total_energy(LabelMap.from_array(labels, n_classes), model)
    for _ in range(max_cycles):
        improved = False
        for alpha in range(1, n_classes + 1):
            flat = labels.reshape(-1)
            cost1 = unary_flat[pixel_ids, alpha - 1]
            cost0 = unary_flat[pixel_ids, flat - 1]
            yi = flat[edges[:, 0]]
            yj = flat[edges[:, 1]]
            theta00 = weight * (yi != yj)
            theta01 = weight * (yi != alpha)
            theta10 = weight * (yj != alpha)
            theta11 = np.zeros(len(edges))
            x, _ = solve_binary_submodular(
                cost0, cost1, edges, theta00, theta01, theta10, theta11
            )
            candidate = flat.copy()
            candidate[x] = alpha
            candidate = candidate.reshape(h, w)
            cand_energy = total_energy(
                LabelMap.from_array(candidate, n_classes), model
            )
            if cand_energy < current:
                labels = candidate
                current = cand_energy
                improved = True
        if not improved:
            break
    return LabelMap.from_array(labels, num_classes=n_classes)
