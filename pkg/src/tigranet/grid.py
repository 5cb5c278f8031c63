"""Regular grid graphs over pixel lattices and their normalized Laplacians.

Nodes are indexed row-major over (row, col); edges carry weight 1. The
symmetric normalized Laplacian has unit diagonal on non-isolated nodes,
``-(d_i * d_j)**-0.5`` between adjacent nodes, and spectrum inside [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp


class Connectivity(Enum):
    """Neighborhood stencil of the pixel lattice."""

    FOUR = "4nn"
    EIGHT = "8nn"


_OFFSETS = {
    Connectivity.FOUR: [(-1, 0), (1, 0), (0, -1), (0, 1)],
    Connectivity.EIGHT: [
        (-1, 0), (1, 0), (0, -1), (0, 1),
        (-1, -1), (-1, 1), (1, -1), (1, 1),
    ],
}


@dataclass(frozen=True)
class GridGraph:
    """Immutable grid graph: adjacency, degrees and normalized Laplacian.

    Safe to share across threads; all fields are read-only after
    construction.
    """

    height: int
    width: int
    connectivity: Connectivity
    adjacency: sp.csc_matrix
    degrees: np.ndarray
    laplacian: sp.csc_matrix

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    def node_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"node ({row}, {col}) outside {self.height}x{self.width} grid")
        return row * self.width + col

    def node_coords(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.num_nodes):
            raise ValueError(f"node index {index} out of range")
        return divmod(index, self.width)


@dataclass(frozen=True)
class LaplacianPowers:
    """Exact sparse powers [I, L, L^2, ..., L^M] of a grid Laplacian."""

    matrices: list
    max_degree: int

    @property
    def laplacian(self) -> sp.csc_matrix:
        if self.max_degree < 1:
            raise ValueError("powers of degree 0 hold no Laplacian")
        return self.matrices[1]


@dataclass(frozen=True)
class PaddedGrid:
    """A grid enlarged by a zero ring, with the embedding of the original nodes."""

    graph: GridGraph
    margin: int
    index_map: np.ndarray  # original node -> padded node, row-major

    def embed_signal(self, signal: np.ndarray) -> np.ndarray:
        out = np.zeros(self.graph.num_nodes)
        out[self.index_map] = signal
        return out

    def extract_signal(self, padded_signal: np.ndarray) -> np.ndarray:
        return padded_signal[self.index_map]


def build_grid_graph(height: int, width: int, connectivity: Connectivity) -> GridGraph:
    """Build the weight-1 grid graph with no wraparound.

    Border nodes keep their naturally reduced degree. Isolated nodes (a 1x1
    grid) get a zero Laplacian diagonal rather than a division by zero.
    """
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be positive, got {height}x{width}")

    n = height * width
    rows_idx, cols_idx = np.divmod(np.arange(n), width)
    src, dst = [], []
    for dr, dc in _OFFSETS[connectivity]:
        rr, cc = rows_idx + dr, cols_idx + dc
        ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
        src.append(np.flatnonzero(ok))
        dst.append(rr[ok] * width + cc[ok])
    src = np.concatenate(src) if src else np.array([], dtype=int)
    dst = np.concatenate(dst) if dst else np.array([], dtype=int)

    adjacency = sp.csc_matrix(
        (np.ones(src.size), (src, dst)), shape=(n, n), dtype=np.float64
    )
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()

    inv_sqrt_d = np.zeros(n)
    nonzero = degrees > 0
    inv_sqrt_d[nonzero] = degrees[nonzero] ** -0.5
    d_half = sp.diags(inv_sqrt_d, format="csc")
    laplacian = sp.diags(nonzero.astype(np.float64), format="csc") - d_half @ adjacency @ d_half
    laplacian = sp.csc_matrix(laplacian)

    return GridGraph(height, width, connectivity, adjacency, degrees, laplacian)


def laplacian_powers(graph: GridGraph, max_degree: int) -> LaplacianPowers:
    """Exact sparse powers of the normalized Laplacian up to `max_degree`.

    Power m is the sparse product of power m-1 with L, so its support never
    exceeds the m-hop neighborhood of each node.
    """
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")
    powers = [sp.identity(graph.num_nodes, format="csc")]
    for _ in range(max_degree):
        powers.append(sp.csc_matrix(powers[-1] @ graph.laplacian))
    return LaplacianPowers(powers, max_degree)


def zero_pad_graph(graph: GridGraph, margin: int) -> PaddedGrid:
    """Enlarge the grid by `margin` zero pixels on every side.

    The returned index map sends each original node to its row-major index
    in the padded grid, so a signal embeds with zeros on the new ring.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    padded = build_grid_graph(
        graph.height + 2 * margin, graph.width + 2 * margin, graph.connectivity
    )
    rows_idx, cols_idx = np.divmod(np.arange(graph.num_nodes), graph.width)
    index_map = (rows_idx + margin) * padded.width + (cols_idx + margin)
    return PaddedGrid(padded, margin, index_map)
