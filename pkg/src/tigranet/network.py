"""Assembly of the full classifier from an architecture string.

A network is an alternation of spectral convolution and dynamic pooling
pairs, one statistical layer, and a stack of affine layers feeding the
softmax. Forward evaluation is read-only with respect to parameters, so
distinct samples may be evaluated concurrently; parameter updates require
exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridGraph, laplacian_powers
from .layers import (
    DenseLayer,
    DPSpec,
    FeatureStats,
    SCSpec,
    SpectralConvLayer,
    StatCache,
    StatSpec,
    chebyshev_stack,
    dense_forward,
    dynamic_pool,
    format_architecture,
    parse_architecture,
    shift_laplacian,
    softmax_nll,
    spectral_conv_forward,
    _stats_from_stack,
)


@dataclass
class NetworkCache:
    """Everything the backward pass needs from one forward evaluation."""

    conv_inputs: list      # input maps fed to each conv layer, (K_prev, N)
    conv_caches: list      # ConvCache per conv layer
    conv_outputs: list     # maps produced by each conv layer
    actives: list          # active index array entering each conv layer
    pool_states: list      # PoolState per pooling layer
    pooled: list           # maps after each pooling layer
    stat_cache: StatCache
    stats: FeatureStats
    features: np.ndarray   # concatenated phi vectors, map-major
    dense_inputs: list     # input vector of each dense layer
    logits: np.ndarray


class Network:
    """Spectral-convolution classifier over one fixed grid graph."""

    def __init__(self, arch, graph: GridGraph):
        specs = parse_architecture(arch) if isinstance(arch, str) else list(arch)
        self.specs = specs
        self.graph = graph
        self.shifted_laplacian = shift_laplacian(graph)

        self.conv_layers: list[SpectralConvLayer] = []
        self.pool_budgets: list[int] = []
        self.stat_order = 0
        self.dense_layers: list[DenseLayer] = []

        num_inputs = 1
        powers_cache: dict[int, object] = {}
        for spec in specs:
            if isinstance(spec, SCSpec):
                if spec.degree not in powers_cache:
                    powers_cache[spec.degree] = laplacian_powers(graph, spec.degree)
                self.conv_layers.append(
                    SpectralConvLayer(
                        alpha=np.zeros((spec.num_filters, spec.degree + 1)),
                        beta=np.zeros(num_inputs),
                        powers=powers_cache[spec.degree],
                    )
                )
                num_inputs = spec.num_filters
            elif isinstance(spec, DPSpec):
                self.pool_budgets.append(spec.budget)
            elif isinstance(spec, StatSpec):
                self.stat_order = spec.max_order
                feature_dim = num_inputs * 2 * (spec.max_order + 1)
            else:
                self.dense_layers.append(
                    DenseLayer(
                        weights=np.zeros((spec.units, feature_dim)),
                        biases=np.zeros(spec.units),
                    )
                )
                feature_dim = spec.units

    @property
    def arch_string(self) -> str:
        return format_architecture(self.specs)

    @property
    def num_classes(self) -> int:
        return self.dense_layers[-1].weights.shape[0]

    def parameters(self) -> dict:
        """Live parameter arrays keyed by a stable name; updates act in place."""
        params = {}
        for i, layer in enumerate(self.conv_layers):
            params[f"conv{i}.alpha"] = layer.alpha
            params[f"conv{i}.beta"] = layer.beta
        for j, layer in enumerate(self.dense_layers):
            params[f"fc{j}.weight"] = layer.weights
            params[f"fc{j}.bias"] = layer.biases
        return params

    def set_parameters(self, values: dict) -> None:
        params = self.parameters()
        missing = set(params) ^ set(values)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, array in params.items():
            incoming = np.asarray(values[name], dtype=np.float64)
            if incoming.shape != array.shape:
                raise ValueError(
                    f"{name} has shape {array.shape}, got {incoming.shape}"
                )
            array[...] = incoming

    def forward(self, signal: np.ndarray) -> NetworkCache:
        signal = np.asarray(signal, dtype=np.float64)
        if signal.shape != (self.graph.num_nodes,):
            raise ValueError(
                f"signal has shape {signal.shape}, grid has {self.graph.num_nodes} nodes"
            )

        maps = signal[np.newaxis, :]
        active = np.arange(self.graph.num_nodes)
        conv_inputs, conv_caches, conv_outputs = [], [], []
        actives, pool_states, pooled_list = [], [], []
        for layer, budget in zip(self.conv_layers, self.pool_budgets):
            conv_inputs.append(maps)
            actives.append(active)
            maps, cache = spectral_conv_forward(layer, maps, active)
            conv_caches.append(cache)
            conv_outputs.append(maps)
            state, maps = dynamic_pool(maps, active, budget)
            pool_states.append(state)
            pooled_list.append(maps)
            active = state.union_nodes

        t = chebyshev_stack(maps, self.shifted_laplacian, self.stat_order)
        stats, stat_cache = _stats_from_stack(t)
        features = stats.phi.ravel()

        dense_inputs = []
        x = features
        for layer in self.dense_layers:
            dense_inputs.append(x)
            x = dense_forward(layer, x)

        return NetworkCache(
            conv_inputs=conv_inputs,
            conv_caches=conv_caches,
            conv_outputs=conv_outputs,
            actives=actives,
            pool_states=pool_states,
            pooled=pooled_list,
            stat_cache=stat_cache,
            stats=stats,
            features=features,
            dense_inputs=dense_inputs,
            logits=x,
        )

    def logits(self, signal: np.ndarray) -> np.ndarray:
        return self.forward(signal).logits

    def predict(self, signal: np.ndarray) -> int:
        return int(np.argmax(self.logits(signal)))

    def loss(self, signal: np.ndarray, label: int) -> float:
        _, loss = softmax_nll(self.logits(signal), label)
        return float(loss)

    def feature_maps(self, signal: np.ndarray):
        """(conv maps, pooled maps) per layer, for visualization export."""
        cache = self.forward(signal)
        return cache.conv_outputs, cache.pooled
