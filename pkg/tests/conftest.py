"""Shared brute-force oracles, deliberately independent of the library code."""

from collections import deque

import numpy as np
import pytest

from tigranet import Connectivity


def neighbor_offsets(connectivity):
    if connectivity is Connectivity.FOUR:
        return [(-1, 0), (1, 0), (0, -1), (0, 1)]
    return [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def brute_force_adjacency(height, width, connectivity):
    """Dense weight-1 adjacency built with plain Python loops."""
    n = height * width
    adj = np.zeros((n, n))
    for r in range(height):
        for c in range(width):
            for dr, dc in neighbor_offsets(connectivity):
                rr, cc = r + dr, c + dc
                if 0 <= rr < height and 0 <= cc < width:
                    adj[r * width + c, rr * width + cc] = 1.0
    return adj


def brute_force_laplacian(height, width, connectivity):
    """Entrywise normalized-Laplacian construction from the definition."""
    adj = brute_force_adjacency(height, width, connectivity)
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    lap = np.zeros((n, n))
    for i in range(n):
        if deg[i] != 0:
            lap[i, i] = 1.0
        for j in range(n):
            if i != j and adj[i, j] > 0:
                lap[i, j] = -1.0 / np.sqrt(deg[i] * deg[j])
    return lap


def bfs_hop_distances(height, width, connectivity):
    """All-pairs hop distances by breadth-first search."""
    adj = brute_force_adjacency(height, width, connectivity)
    n = adj.shape[0]
    hops = np.full((n, n), np.inf)
    neighbors = [np.flatnonzero(adj[i]) for i in range(n)]
    for source in range(n):
        hops[source, source] = 0
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nb in neighbors[node]:
                if hops[source, nb] == np.inf:
                    hops[source, nb] = hops[source, node] + 1
                    queue.append(nb)
    return hops


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
