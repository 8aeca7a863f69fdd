"""Cell adjacency graph over a sectored deployment.

Two kinds of edges: every pair of cells sharing a site is connected, and each
cell is connected to its k nearest other cells measured site-to-site (so
same-site cells sit at distance zero and are always the nearest candidates).
The union is symmetrized. All orderings are deterministic: distance ties break
toward the lower cell id, neighbor lists are ascending, and the closed
neighborhood of a cell lists the cell itself first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class CellGraph:
    n_nodes: int
    edges: list[tuple[int, int]]              # (i, j) with i < j, sorted
    neighbors: list[np.ndarray]               # ascending ids, self excluded
    closed_neighborhoods: list[np.ndarray]    # self first, then ascending ids
    cell_dist_m: np.ndarray                   # (C, C) site-to-site distances

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def closed_neighborhood(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_nodes:
            raise ValueError(f"unknown cell id {i}")
        return self.closed_neighborhoods[i]

    def nearest_neighbors(self, i: int, k: int) -> np.ndarray:
        """The k nearest graph neighbors of i (site distance, ties to lower id),
        returned in ascending id order; fewer if the degree is below k."""
        nbrs = self.neighbors[i]
        order = sorted(nbrs, key=lambda j: (self.cell_dist_m[i, j], j))[:k]
        return np.array(sorted(order), dtype=np.intp)

    def hop_distances(self, src: int) -> np.ndarray:
        """Breadth-first hop count from src to every node (-1 if unreachable)."""
        dist = np.full(self.n_nodes, -1, dtype=np.int64)
        dist[src] = 0
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        nxt.append(int(v))
            frontier = nxt
        return dist


def build_graph(site_xy: np.ndarray, cell_site: np.ndarray, k: int) -> CellGraph:
    """Construct the same-site plus k-nearest cell graph.

    k counts neighbor candidates per cell before symmetrization, so degrees
    can exceed k but never fall below min(k, C-1).
    """
    if k < 0:
        raise ValueError(f"neighbor count must be >= 0, got {k}")
    cell_site = np.asarray(cell_site)
    n = len(cell_site)
    site_d = np.hypot(site_xy[:, None, 0] - site_xy[None, :, 0],
                      site_xy[:, None, 1] - site_xy[None, :, 1])
    cell_d = site_d[cell_site[:, None], cell_site[None, :]]

    pairs: set[tuple[int, int]] = set()
    for i in range(n):
        same = np.nonzero(cell_site == cell_site[i])[0]
        for j in same:
            if j != i:
                pairs.add((min(i, int(j)), max(i, int(j))))
        others = sorted((j for j in range(n) if j != i),
                        key=lambda j: (cell_d[i, j], j))
        for j in others[:k]:
            pairs.add((min(i, j), max(i, j)))

    neighbors: list[list[int]] = [[] for _ in range(n)]
    for i, j in pairs:
        neighbors[i].append(j)
        neighbors[j].append(i)
    nb_arrays = [np.array(sorted(ns), dtype=np.intp) for ns in neighbors]
    closed = [np.concatenate(([i], nb_arrays[i])).astype(np.intp) for i in range(n)]
    return CellGraph(n, sorted(pairs), nb_arrays, closed, cell_d)


def graph_to_csv(path, graph: CellGraph) -> None:
    """Edge list with site-to-site distances (src, dst, distance_m)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "distance_m"])
        for i, j in graph.edges:
            w.writerow([i, j, repr(float(graph.cell_dist_m[i, j]))])
