import numpy as np
import pytest

from tigranet import (
    Connectivity,
    build_grid_graph,
    eigendecompose,
    laplacian_powers,
    spectral_filter,
)
from tigranet.layers import (
    ArchitectureError,
    DenseLayer,
    DPSpec,
    FCSpec,
    SCSpec,
    SpectralConvLayer,
    StatSpec,
    dense_forward,
    dynamic_pool,
    dynamic_pool_backward,
    format_architecture,
    parse_architecture,
    softmax_nll,
    spectral_conv_forward,
    statistical_forward,
)
from tigranet.transforms import TransformSpec, apply_graph_isometry

from conftest import bfs_hop_distances


def make_layer(graph, alpha, beta):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    powers = laplacian_powers(graph, alpha.shape[1] - 1)
    return SpectralConvLayer(alpha=alpha, beta=np.asarray(beta, dtype=float), powers=powers)


class TestSpectralConvForward:
    def test_identity_layer(self, rng):
        graph = build_grid_graph(4, 4, Connectivity.FOUR)
        layer = make_layer(graph, [[1.0]], [1.0])
        signal = rng.uniform(size=16)
        maps, _ = spectral_conv_forward(layer, signal[np.newaxis], np.arange(16))
        np.testing.assert_allclose(maps[0], signal, atol=1e-14)

    def test_pure_laplacian_matches_spectral_oracle(self, rng):
        graph = build_grid_graph(4, 4, Connectivity.FOUR)
        basis = eigendecompose(graph)
        layer = make_layer(graph, [[0.0, 1.0]], [1.0])
        signal = rng.uniform(size=16)
        maps, _ = spectral_conv_forward(layer, signal[np.newaxis], np.arange(16))
        oracle = spectral_filter(basis, signal, lambda lam: lam)
        np.testing.assert_allclose(maps[0], oracle, atol=1e-8)

    @pytest.mark.parametrize("connectivity", [Connectivity.FOUR, Connectivity.EIGHT])
    def test_random_polynomials_match_spectral_oracle(self, connectivity, rng):
        for shape in [(3, 3), (5, 4), (8, 8)]:
            graph = build_grid_graph(*shape, connectivity)
            basis = eigendecompose(graph)
            n = graph.num_nodes
            for _ in range(5):
                degree = int(rng.integers(0, 6))
                alpha = rng.uniform(-1, 1, degree + 1)
                layer = make_layer(graph, alpha[np.newaxis], [1.0])
                signal = rng.normal(size=n)
                maps, _ = spectral_conv_forward(layer, signal[np.newaxis], np.arange(n))
                oracle = spectral_filter(
                    basis, signal, lambda lam: sum(a * lam**m for m, a in enumerate(alpha))
                )
                np.testing.assert_allclose(maps[0], oracle, atol=1e-8)

    def test_singleton_active_set_confines_support(self, rng):
        graph = build_grid_graph(5, 5, Connectivity.FOUR)
        layer = make_layer(graph, [rng.uniform(-1, 1, 4)], [1.0])
        signal = rng.uniform(size=25)
        center = graph.node_index(2, 2)
        maps, _ = spectral_conv_forward(layer, signal[np.newaxis], np.array([center]))
        assert np.all(maps[0, np.arange(25) != center] == 0.0)

    def test_filter_output_uses_only_hop_neighborhood(self, rng):
        # perturbing the signal outside the M-hop ball of the active node
        # must not change the filter value there
        graph = build_grid_graph(5, 5, Connectivity.FOUR)
        degree = 2
        layer = make_layer(graph, [rng.uniform(-1, 1, degree + 1)], [1.0])
        hops = bfs_hop_distances(5, 5, Connectivity.FOUR)
        center = graph.node_index(2, 2)
        signal = rng.uniform(size=25)
        far = hops[center] > degree
        perturbed = signal.copy()
        perturbed[far] += rng.uniform(1.0, 2.0, far.sum())
        maps_a, _ = spectral_conv_forward(layer, signal[np.newaxis], np.array([center]))
        maps_b, _ = spectral_conv_forward(layer, perturbed[np.newaxis], np.array([center]))
        assert maps_a[0, center] == pytest.approx(maps_b[0, center], abs=1e-12)

    def test_beta_mixes_input_maps(self, rng):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        layer = make_layer(graph, [[1.0]], [2.0, -0.5])
        inputs = rng.uniform(size=(2, 9))
        maps, _ = spectral_conv_forward(layer, inputs, np.arange(9))
        np.testing.assert_allclose(maps[0], 2.0 * inputs[0] - 0.5 * inputs[1], atol=1e-14)

    def test_input_count_mismatch(self, rng):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        layer = make_layer(graph, [[1.0]], [1.0])
        with pytest.raises(ValueError):
            spectral_conv_forward(layer, rng.uniform(size=(2, 9)), np.arange(9))

    def test_empty_active_set(self, rng):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        layer = make_layer(graph, [[1.0]], [1.0])
        with pytest.raises(ValueError):
            spectral_conv_forward(layer, rng.uniform(size=(1, 9)), np.array([], dtype=int))


class TestDynamicPool:
    def test_budget_exceeding_candidates_keeps_everything(self, rng):
        maps = rng.uniform(size=(2, 6))
        state, pooled = dynamic_pool(maps, np.arange(6), budget=10)
        np.testing.assert_array_equal(state.union_nodes, np.arange(6))
        np.testing.assert_allclose(pooled, maps)

    def test_tie_breaks_toward_lowest_index(self):
        maps = np.array([[5.0, 1.0, 3.0, 3.0]])
        state, _ = dynamic_pool(maps, np.arange(4), budget=2)
        np.testing.assert_array_equal(state.per_filter_nodes[0], [0, 2])

    def test_matches_full_sort_oracle(self, rng):
        maps = rng.normal(size=(10, 36))
        active = np.sort(rng.choice(36, size=20, replace=False))
        budget = 7
        state, pooled = dynamic_pool(maps, active, budget)
        for i in range(10):
            # brute force: sort candidate (value, -index) pairs descending
            ranked = sorted(active, key=lambda v: (-maps[i, v], v))
            expected = np.sort(ranked[:budget])
            np.testing.assert_array_equal(state.per_filter_nodes[i], expected)
            mask = np.zeros(36, dtype=bool)
            mask[expected] = True
            np.testing.assert_array_equal(pooled[i, ~mask], 0.0)
            np.testing.assert_array_equal(pooled[i, mask], maps[i, mask])

    def test_selection_counts_and_union(self, rng):
        maps = rng.normal(size=(3, 30))
        active = np.arange(4, 30)
        state, _ = dynamic_pool(maps, active, budget=8)
        assert all(len(nodes) == 8 for nodes in state.per_filter_nodes)
        expected_union = np.unique(np.concatenate(state.per_filter_nodes))
        np.testing.assert_array_equal(state.union_nodes, expected_union)
        assert np.all(np.isin(state.union_nodes, active))

    def test_nesting_over_successive_pools(self, rng):
        maps = rng.normal(size=(2, 40))
        state1, pooled = dynamic_pool(maps, np.arange(40), budget=20)
        state2, _ = dynamic_pool(pooled, state1.union_nodes, budget=5)
        assert np.all(np.isin(state2.union_nodes, state1.union_nodes))

    def test_empty_active_rejected(self, rng):
        with pytest.raises(ValueError):
            dynamic_pool(rng.uniform(size=(1, 5)), np.array([], dtype=int), 2)

    def test_zero_budget_rejected(self, rng):
        with pytest.raises(ValueError):
            dynamic_pool(rng.uniform(size=(1, 5)), np.arange(5), 0)

    def test_backward_masks_non_selected(self, rng):
        maps = rng.normal(size=(2, 12))
        state, _ = dynamic_pool(maps, np.arange(12), budget=4)
        upstream = rng.normal(size=(2, 12))
        grads = dynamic_pool_backward(state, upstream)
        for i in range(2):
            mask = np.zeros(12, dtype=bool)
            mask[state.per_filter_nodes[i]] = True
            np.testing.assert_array_equal(grads[i, mask], upstream[i, mask])
            np.testing.assert_array_equal(grads[i, ~mask], 0.0)

    def test_backward_identity_when_everything_selected(self, rng):
        maps = rng.normal(size=(1, 6))
        state, _ = dynamic_pool(maps, np.arange(6), budget=6)
        upstream = rng.normal(size=(1, 6))
        np.testing.assert_array_equal(dynamic_pool_backward(state, upstream), upstream)


class TestStatisticalLayer:
    def test_zero_maps_give_zero_stats(self):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        stats, _ = statistical_forward(np.zeros((2, 9)), graph, max_order=3)
        np.testing.assert_array_equal(stats.phi, np.zeros((2, 8)))

    def test_order_zero_reduces_to_plain_moments(self, rng):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        maps = rng.normal(size=(1, 9))
        stats, _ = statistical_forward(maps, graph, max_order=0)
        assert stats.phi.shape == (1, 2)
        assert stats.phi[0, 0] == pytest.approx(np.abs(maps[0]).mean())
        assert stats.phi[0, 1] == pytest.approx(np.abs(maps[0]).var())

    def test_phi_length_and_nonnegative_variance(self, rng):
        graph = build_grid_graph(4, 4, Connectivity.EIGHT)
        maps = rng.normal(size=(3, 16))
        stats, _ = statistical_forward(maps, graph, max_order=5)
        assert stats.phi.shape == (3, 12)
        assert np.all(stats.variances >= 0.0)

    def test_moments_include_zeroed_nodes(self):
        # moments divide by all N nodes, not by the active count
        graph = build_grid_graph(2, 2, Connectivity.FOUR)
        maps = np.array([[3.0, 0.0, 0.0, 0.0]])
        stats, _ = statistical_forward(maps, graph, max_order=0)
        assert stats.means[0, 0] == pytest.approx(3.0 / 4.0)
        assert stats.variances[0, 0] == pytest.approx(np.var([3.0, 0.0, 0.0, 0.0]))

    @pytest.mark.parametrize("max_order", [3, 12])
    def test_chebyshev_recursion_matches_spectral_oracle(self, max_order, rng):
        # vertex-domain recursion against chi diag(T_k(lambda - 1)) chi^T z
        graph = build_grid_graph(4, 4, Connectivity.FOUR)
        basis = eigendecompose(graph)
        maps = rng.normal(size=(1, 16))
        _, cache = statistical_forward(maps, graph, max_order=max_order)
        for k in range(max_order + 1):
            coeffs = np.zeros(k + 1)
            coeffs[k] = 1.0
            response = np.polynomial.chebyshev.chebval(basis.eigenvalues - 1.0, coeffs)
            oracle = basis.eigenvectors @ (response * (basis.eigenvectors.T @ maps[0]))
            np.testing.assert_allclose(cache.chebyshev[0, k], oracle, atol=1e-8)

    def test_negative_order_rejected(self, rng):
        graph = build_grid_graph(3, 3, Connectivity.FOUR)
        with pytest.raises(ValueError):
            statistical_forward(rng.normal(size=(1, 9)), graph, max_order=-1)

    def test_invariant_under_grid_automorphism(self, rng):
        # permuting the signal by a lattice rotation leaves every moment
        # unchanged because the shifted Laplacian commutes with it
        graph = build_grid_graph(5, 5, Connectivity.EIGHT)
        maps = rng.normal(size=(2, 25))
        rotated = np.stack(
            [
                apply_graph_isometry(m.reshape(5, 5), TransformSpec(rotation=np.pi / 2)).ravel()
                for m in maps
            ]
        )
        stats_a, _ = statistical_forward(maps, graph, max_order=4)
        stats_b, _ = statistical_forward(rotated, graph, max_order=4)
        np.testing.assert_allclose(stats_a.phi, stats_b.phi, atol=1e-10)


class TestDenseAndSoftmax:
    def test_dense_identity(self):
        layer = DenseLayer(np.eye(3), np.zeros(3))
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(dense_forward(layer, x), x)

    def test_dense_zero_input_returns_bias(self, rng):
        layer = DenseLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
        np.testing.assert_array_equal(dense_forward(layer, np.zeros(4)), layer.biases)

    def test_dense_matches_hand_multiply(self, rng):
        weights = rng.normal(size=(3, 4))
        biases = rng.normal(size=3)
        x = rng.normal(size=4)
        expected = np.array(
            [sum(weights[i, j] * x[j] for j in range(4)) + biases[i] for i in range(3)]
        )
        np.testing.assert_allclose(dense_forward(DenseLayer(weights, biases), x), expected)

    def test_dense_dimension_mismatch(self, rng):
        layer = DenseLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
        with pytest.raises(ValueError):
            dense_forward(layer, np.zeros(5))

    def test_softmax_uniform_logits(self):
        probs, loss = softmax_nll(np.zeros(5), 3)
        np.testing.assert_allclose(probs, np.full(5, 0.2))
        assert loss == pytest.approx(np.log(5))

    def test_softmax_stability_no_overflow(self):
        probs, loss = softmax_nll(np.array([1000.0, 0.0]), 0)
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_softmax_hand_value(self):
        _, loss = softmax_nll(np.array([1.0, 2.0, 3.0]), 2)
        expected = -np.log(np.exp(3) / (np.exp(1) + np.exp(2) + np.exp(3)))
        assert loss == pytest.approx(expected)
        assert loss == pytest.approx(0.40760596, abs=1e-8)

    def test_softmax_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_nll(np.zeros(3), 3)


class TestArchitectureParser:
    def test_reference_string(self):
        text = "SC[3, 3]-DP[300]-SC[6, 3]-DP[100]-S[10]-FC[50]-FC[30]-FC[10]"
        specs = parse_architecture(text)
        assert specs == [
            SCSpec(3, 3), DPSpec(300), SCSpec(6, 3), DPSpec(100),
            StatSpec(10), FCSpec(50), FCSpec(30), FCSpec(10),
        ]
        assert format_architecture(specs) == text

    def test_small_string(self):
        specs = parse_architecture("SC[2, 2]-DP[20]-S[4]-FC[8]-FC[3]")
        assert specs[0] == SCSpec(2, 2)
        assert specs[-1] == FCSpec(3)

    @pytest.mark.parametrize(
        "bad",
        [
            "SC[3]-DP[10]-S[2]-FC[3]",       # SC needs two args
            "DP[10]-SC[3, 3]-S[2]-FC[3]",    # must start with SC
            "SC[3, 3]-DP[10]-FC[3]",         # missing statistical layer
            "SC[3, 3]-DP[10]-S[2]",          # missing FC head
            "SC[3, 3]-S[2]-FC[3]",           # SC without DP
            "XX[1]",                          # unknown token
            "SC[3, 3]-DP[10]-S[2]-FC[3]-DP[5]",  # trailing pool
        ],
    )
    def test_malformed_strings_rejected(self, bad):
        with pytest.raises(ArchitectureError):
            parse_architecture(bad)


class TestLayerEquivariance:
    @pytest.mark.parametrize("connectivity", [Connectivity.FOUR, Connectivity.EIGHT])
    def test_conv_commutes_with_lattice_rotation(self, connectivity, rng):
        graph = build_grid_graph(6, 6, Connectivity.FOUR if connectivity is Connectivity.FOUR else Connectivity.EIGHT)
        layer = make_layer(graph, [rng.uniform(-1, 1, 4)], [1.0])
        signal = rng.uniform(size=36)
        spec = TransformSpec(rotation=np.pi / 2)
        rotated = apply_graph_isometry(signal.reshape(6, 6), spec).ravel()
        maps_rot, _ = spectral_conv_forward(layer, rotated[np.newaxis], np.arange(36))
        maps_orig, _ = spectral_conv_forward(layer, signal[np.newaxis], np.arange(36))
        rotated_maps = apply_graph_isometry(maps_orig[0].reshape(6, 6), spec).ravel()
        np.testing.assert_allclose(maps_rot[0], rotated_maps, atol=1e-10)

    def test_pooling_equivariant_without_ties(self, rng):
        # with all-distinct values the selected sets map through the rotation
        graph = build_grid_graph(5, 5, Connectivity.FOUR)
        maps = rng.normal(size=(1, 25))
        spec = TransformSpec(rotation=np.pi)
        rotated = apply_graph_isometry(maps[0].reshape(5, 5), spec).ravel()

        state_orig, _ = dynamic_pool(maps, np.arange(25), budget=7)
        state_rot, _ = dynamic_pool(rotated[np.newaxis], np.arange(25), budget=7)

        marker = np.zeros(25)
        marker[state_orig.per_filter_nodes[0]] = 1.0
        marker_rot = apply_graph_isometry(marker.reshape(5, 5), spec).ravel()
        np.testing.assert_array_equal(
            np.sort(np.flatnonzero(marker_rot)), state_rot.per_filter_nodes[0]
        )

    def test_pooling_with_ties_preserves_cardinality(self):
        maps = np.zeros((1, 16))
        maps[0, :4] = 1.0
        spec = TransformSpec(rotation=np.pi / 2)
        rotated = apply_graph_isometry(maps[0].reshape(4, 4), spec).ravel()
        state_a, _ = dynamic_pool(maps, np.arange(16), budget=8)
        state_b, _ = dynamic_pool(rotated[np.newaxis], np.arange(16), budget=8)
        assert len(state_a.per_filter_nodes[0]) == len(state_b.per_filter_nodes[0])
