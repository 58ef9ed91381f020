"""Max-flow / min-cut on a directed network (Dinic's algorithm).

Capacities are floats; a small threshold guards the residual tests so that
round-off never creates phantom augmenting paths.
"""

from collections import deque

import numpy as np

_CAP_EPS = 1e-11


class FlowNetwork:
    """Residual network with adjacency lists of [to, cap, rev_index] edges."""

    def __init__(self, num_nodes):
        self.num_nodes = num_nodes
        self.adj = [[] for _ in range(num_nodes)]

    def add_edge(self, u, v, cap, rev_cap=0.0):
        """Directed edge u->v with capacity cap; rev_cap on the v->u edge."""
        if cap < 0 or rev_cap < 0:
            raise ValueError("capacities must be non-negative")
        self.adj[u].append([v, float(cap), len(self.adj[v])])
        self.adj[v].append([u, float(rev_cap), len(self.adj[u]) - 1])

    def _bfs_levels(self, source, sink):
        level = [-1] * self.num_nodes
        level[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for edge in self.adj[u]:
                v, cap = edge[0], edge[1]
                if cap > _CAP_EPS and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[sink] >= 0 else None

    def _find_augmenting_path(self, source, sink, level, it):
        """Pointer-based DFS for one admissible path; returns [(node, edge_i)]."""
        path = []
        u = source
        while True:
            if u == sink:
                return path
            if it[u] < len(self.adj[u]):
                edge = self.adj[u][it[u]]
                v, cap = edge[0], edge[1]
                if cap > _CAP_EPS and level[v] == level[u] + 1:
                    path.append((u, it[u]))
                    u = v
                else:
                    it[u] += 1
            else:
                if u == source:
                    return None
                level[u] = -1  # dead end; prune for the rest of this phase
                pu, _ = path.pop()
                it[pu] += 1
                u = pu

    def _blocking_flow(self, source, sink, level):
        total = 0.0
        it = [0] * self.num_nodes
        while True:
            path = self._find_augmenting_path(source, sink, level, it)
            if path is None:
                return total
            bottleneck = min(self.adj[u][i][1] for u, i in path)
            for u, i in path:
                edge = self.adj[u][i]
                edge[1] -= bottleneck
                self.adj[edge[0]][edge[2]][1] += bottleneck
            total += bottleneck

    def max_flow(self, source, sink):
        """Total max flow from source to sink; mutates residual capacities."""
        flow = 0.0
        while True:
            level = self._bfs_levels(source, sink)
            if level is None:
                return flow
            flow += self._blocking_flow(source, sink, level)

    def source_side(self, source):
        """Nodes reachable from source in the residual graph (after max_flow)."""
        seen = np.zeros(self.num_nodes, dtype=bool)
        seen[source] = True
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v, cap, _ in self.adj[u]:
                if cap > _CAP_EPS and not seen[v]:
                    seen[v] = True
                    queue.append(v)
        return seen
