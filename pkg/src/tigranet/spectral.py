"""Dense graph Fourier analysis: the slow reference oracle.

Everything here costs O(N^3) and exists to cross-check the fast
vertex-domain polynomial filtering and to plot filter spectra. It is never
called on the training path. Graphs are real, so eigenvectors are real and
conjugation is a no-op throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridGraph

ORACLE_NODE_LIMIT = 4096


class OracleSizeError(ValueError):
    """The graph is too large for a dense eigendecomposition."""


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of a normalized grid Laplacian, eigenvalues ascending."""

    eigenvalues: np.ndarray   # (N,), ascending, inside [0, 2]
    eigenvectors: np.ndarray  # (N, N), orthonormal columns

    @property
    def num_nodes(self) -> int:
        return self.eigenvalues.shape[0]


def eigendecompose(graph: GridGraph, node_limit: int = ORACLE_NODE_LIMIT) -> SpectralBasis:
    """Full dense symmetric eigendecomposition of the graph Laplacian."""
    if graph.num_nodes > node_limit:
        raise OracleSizeError(
            f"graph has {graph.num_nodes} nodes, oracle limit is {node_limit}"
        )
    eigenvalues, eigenvectors = np.linalg.eigh(graph.laplacian.toarray())
    return SpectralBasis(eigenvalues, eigenvectors)


def _check_length(basis: SpectralBasis, vector: np.ndarray, what: str) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (basis.num_nodes,):
        raise ValueError(
            f"{what} has shape {vector.shape}, expected ({basis.num_nodes},)"
        )
    return vector


def gft(basis: SpectralBasis, signal: np.ndarray) -> np.ndarray:
    """Project a vertex-domain signal onto the Fourier basis."""
    signal = _check_length(basis, signal, "signal")
    return basis.eigenvectors.T @ signal


def igft(basis: SpectralBasis, spectrum: np.ndarray) -> np.ndarray:
    """Reconstruct the vertex-domain signal from its spectrum."""
    spectrum = _check_length(basis, spectrum, "spectrum")
    return basis.eigenvectors @ spectrum


def spectral_filter(basis: SpectralBasis, signal: np.ndarray, kernel) -> np.ndarray:
    """Filter a signal by a spectral kernel defined on [0, 2]."""
    signal = _check_length(basis, signal, "signal")
    response = np.asarray([kernel(lam) for lam in basis.eigenvalues], dtype=np.float64)
    return basis.eigenvectors @ (response * (basis.eigenvectors.T @ signal))


def generalized_translation(basis: SpectralBasis, signal: np.ndarray, center: int) -> np.ndarray:
    """Localize a signal at `center` by convolution with a delta there."""
    signal = _check_length(basis, signal, "signal")
    if not (0 <= center < basis.num_nodes):
        raise ValueError(f"center {center} out of range for {basis.num_nodes} nodes")
    spectrum = basis.eigenvectors.T @ signal
    return np.sqrt(basis.num_nodes) * (
        basis.eigenvectors @ (spectrum * basis.eigenvectors[center, :])
    )


def filter_response_curve(alpha: np.ndarray, num_samples: int = 256):
    """Evaluate the polynomial spectral response on a uniform [0, 2] grid.

    Returns (lambdas, responses) with responses[j] = sum_m alpha[m] * lambdas[j]**m.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    lambdas = np.linspace(0.0, 2.0, num_samples)
    responses = np.polynomial.polynomial.polyval(lambdas, alpha)
    return lambdas, responses


def filter_spectra_rows(alphas, num_samples: int = 256):
    """CSV-ready rows (filter_index, lambda, response) for a list of filters."""
    rows = []
    for i, alpha in enumerate(alphas):
        lambdas, responses = filter_response_curve(alpha, num_samples)
        rows.extend((i, lam, resp) for lam, resp in zip(lambdas, responses))
    return rows
