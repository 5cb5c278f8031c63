"""Forward passes of the network layers.

The spectral convolution combines Laplacian-polynomial filter responses of
its input maps; dynamic pooling keeps the strongest nodes of each map
inside the active set inherited from the previous layer; the statistical
layer turns maps into permutation-invariant moment vectors of
Chebyshev-filtered magnitudes. There is no pointwise activation anywhere:
the magnitude taken inside the statistical layer is the only nonlinearity
before the softmax.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import GridGraph, LaplacianPowers


@dataclass
class SpectralConvLayer:
    """One bank of Laplacian-polynomial filters with shared input mixing.

    alpha[i, m] weights L^m inside filter i; beta[k] weights input map k in
    every output map. Parameters are mutated only by the optimizer; forward
    evaluation never writes.
    """

    alpha: np.ndarray  # (num_filters, degree + 1)
    beta: np.ndarray   # (num_inputs,)
    powers: LaplacianPowers

    @property
    def num_filters(self) -> int:
        return self.alpha.shape[0]

    @property
    def degree(self) -> int:
        return self.alpha.shape[1] - 1

    @property
    def num_inputs(self) -> int:
        return self.beta.shape[0]


@dataclass
class ConvCache:
    """Forward state needed by the backward pass of one conv layer."""

    signal_powers: np.ndarray  # (num_inputs, degree + 1, N): L^m applied to each input
    active_mask: np.ndarray    # (N,) bool


@dataclass
class PoolState:
    """Per-map selected nodes and their union after one pooling step."""

    per_filter_nodes: list      # ascending index arrays, one per map
    union_nodes: np.ndarray     # ascending indices
    budget: int


@dataclass
class FeatureStats:
    """Mean/variance of |t_k| per map: phi[i] = [mu_0, var_0, ..., mu_K, var_K]."""

    means: np.ndarray      # (num_maps, max_order + 1)
    variances: np.ndarray  # (num_maps, max_order + 1)

    @property
    def phi(self) -> np.ndarray:
        stacked = np.stack([self.means, self.variances], axis=2)
        return stacked.reshape(self.means.shape[0], -1)


@dataclass
class StatCache:
    chebyshev: np.ndarray  # (num_maps, max_order + 1, N): the t_k stack
    magnitudes: np.ndarray  # |chebyshev|


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray   # (out,)


def signal_power_stack(laplacian: sp.spmatrix, signal: np.ndarray, degree: int) -> np.ndarray:
    """[y, L y, L^2 y, ..., L^degree y] by repeated sparse matvec."""
    stack = np.empty((degree + 1, signal.shape[0]))
    stack[0] = signal
    for m in range(1, degree + 1):
        stack[m] = laplacian @ stack[m - 1]
    return stack


def spectral_conv_forward(
    layer: SpectralConvLayer, inputs: np.ndarray, active: np.ndarray
):
    """Filter each input map, mix with beta, and mask to the active set.

    `inputs` is (num_inputs, N); `active` is an ascending index array of
    the nodes the filters are centered on. Output values off the active set
    are zero, matching a column restriction of the filter operator before
    its transpose is applied.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] != layer.num_inputs:
        raise ValueError(
            f"layer expects {layer.num_inputs} input maps, got {inputs.shape[0]}"
        )
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise ValueError("active node set is empty")

    n = inputs.shape[1]
    laplacian = layer.powers.matrices[1] if layer.degree >= 1 else None
    stacks = np.empty((layer.num_inputs, layer.degree + 1, n))
    for k in range(layer.num_inputs):
        if laplacian is None:
            stacks[k, 0] = inputs[k]
        else:
            stacks[k] = signal_power_stack(laplacian, inputs[k], layer.degree)

    mask = np.zeros(n, dtype=bool)
    mask[active] = True
    # z_i = mask * sum_k beta_k sum_m alpha_im L^m y_k
    mixed = np.tensordot(layer.beta, stacks, axes=(0, 0))   # (degree+1, N)
    maps = layer.alpha @ mixed                              # (num_filters, N)
    maps = maps * mask

    return maps, ConvCache(signal_powers=stacks, active_mask=mask)


def dynamic_pool(maps: np.ndarray, prev_active: np.ndarray, budget: int):
    """Keep the strongest `budget` nodes of each map within `prev_active`.

    Ties break toward the lowest node index so results are reproducible.
    Returns the pool state and the maps with non-selected values zeroed.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    prev_active = np.asarray(prev_active, dtype=int)
    if prev_active.size == 0:
        raise ValueError("previous active set is empty")
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))

    keep = min(budget, prev_active.size)
    per_filter = []
    pooled = np.zeros_like(maps)
    for i in range(maps.shape[0]):
        values = maps[i, prev_active]
        # stable sort on negated values: equal values keep ascending index order
        order = np.argsort(-values, kind="stable")
        selected = np.sort(prev_active[order[:keep]])
        per_filter.append(selected)
        pooled[i, selected] = maps[i, selected]

    union = np.unique(np.concatenate(per_filter))
    return PoolState(per_filter, union, budget), pooled


def dynamic_pool_backward(state: PoolState, upstream: np.ndarray) -> np.ndarray:
    """Pass gradients through selected nodes; non-selected nodes get zero."""
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if len(state.per_filter_nodes) != upstream.shape[0]:
        raise ValueError(
            f"pool state holds {len(state.per_filter_nodes)} maps, "
            f"upstream has {upstream.shape[0]}"
        )
    out = np.zeros_like(upstream)
    for i, nodes in enumerate(state.per_filter_nodes):
        out[i, nodes] = upstream[i, nodes]
    return out


def chebyshev_stack(maps: np.ndarray, shifted_laplacian: sp.spmatrix, max_order: int) -> np.ndarray:
    """t_0 = z, t_1 = Ls z, t_k = 2 Ls t_{k-1} - t_{k-2} for each map."""
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    num_maps, n = maps.shape
    t = np.empty((num_maps, max_order + 1, n))
    t[:, 0] = maps
    if max_order >= 1:
        t[:, 1] = (shifted_laplacian @ maps.T).T
    for k in range(2, max_order + 1):
        t[:, k] = 2.0 * (shifted_laplacian @ t[:, k - 1].T).T - t[:, k - 2]
    return t


def shift_laplacian(graph: GridGraph) -> sp.csr_matrix:
    """L - I, moving the spectrum onto the Chebyshev support [-1, 1]."""
    return sp.csr_matrix(graph.laplacian - sp.identity(graph.num_nodes, format="csc"))


def statistical_forward(maps: np.ndarray, graph: GridGraph, max_order: int):
    """Moment vectors of Chebyshev-filtered magnitudes for each input map.

    Means and variances are taken over all N nodes, zeros included, with
    the population (divide-by-N) variance convention; the backward pass
    relies on both choices.
    """
    if max_order < 0:
        raise ValueError(f"max_order must be >= 0, got {max_order}")
    t = chebyshev_stack(maps, shift_laplacian(graph), max_order)
    return _stats_from_stack(t)


def _stats_from_stack(t: np.ndarray):
    magnitudes = np.abs(t)
    means = magnitudes.mean(axis=2)
    variances = magnitudes.var(axis=2)
    return FeatureStats(means, variances), StatCache(t, magnitudes)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Affine map W x + b."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.weights.shape[1],):
        raise ValueError(
            f"input has shape {x.shape}, layer expects ({layer.weights.shape[1]},)"
        )
    return layer.weights @ x + layer.biases


def softmax_nll(logits: np.ndarray, label: int):
    """Stabilized softmax probabilities and negative log-likelihood."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[0]):
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    loss = -(shifted[label] - np.log(exp.sum()))
    return probs, loss


# --- architecture strings ---------------------------------------------------

@dataclass(frozen=True)
class SCSpec:
    num_filters: int
    degree: int


@dataclass(frozen=True)
class DPSpec:
    budget: int


@dataclass(frozen=True)
class StatSpec:
    max_order: int


@dataclass(frozen=True)
class FCSpec:
    units: int


_TOKEN_RE = re.compile(r"^(SC|DP|S|FC)\[([0-9, ]+)\]$")


class ArchitectureError(ValueError):
    """The architecture string is malformed or the layer order is invalid."""


def parse_architecture(text: str):
    """Parse strings like "SC[3, 3]-DP[300]-SC[6, 3]-DP[100]-S[10]-FC[50]-FC[10]".

    The layout must be one or more SC[filters, degree]-DP[budget] pairs,
    one S[max_order], then one or more FC[units]; the last FC width is the
    class count.
    """
    specs = []
    for token in (t.strip() for t in text.strip().split("-")):
        match = _TOKEN_RE.match(token)
        if not match:
            raise ArchitectureError(f"unrecognized layer token {token!r}")
        kind, args_text = match.groups()
        args = [int(a) for a in args_text.replace(",", " ").split()]
        if kind == "SC":
            if len(args) != 2:
                raise ArchitectureError(f"SC takes [filters, degree], got {token!r}")
            specs.append(SCSpec(*args))
        elif kind == "DP":
            if len(args) != 1:
                raise ArchitectureError(f"DP takes [budget], got {token!r}")
            specs.append(DPSpec(args[0]))
        elif kind == "S":
            if len(args) != 1:
                raise ArchitectureError(f"S takes [max_order], got {token!r}")
            specs.append(StatSpec(args[0]))
        else:
            if len(args) != 1:
                raise ArchitectureError(f"FC takes [units], got {token!r}")
            specs.append(FCSpec(args[0]))

    pattern = "".join(
        {"SCSpec": "c", "DPSpec": "p", "StatSpec": "s", "FCSpec": "f"}[type(s).__name__]
        for s in specs
    )
    if not re.fullmatch(r"(cp)+sf+", pattern):
        raise ArchitectureError(
            "layers must form SC-DP pairs, then S, then FC layers; "
            f"got {text!r}"
        )
    return specs


def format_architecture(specs) -> str:
    parts = []
    for s in specs:
        if isinstance(s, SCSpec):
            parts.append(f"SC[{s.num_filters}, {s.degree}]")
        elif isinstance(s, DPSpec):
            parts.append(f"DP[{s.budget}]")
        elif isinstance(s, StatSpec):
            parts.append(f"S[{s.max_order}]")
        else:
            parts.append(f"FC[{s.units}]")
    return "-".join(parts)
