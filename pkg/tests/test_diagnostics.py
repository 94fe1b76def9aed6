import numpy as np
import pytest

from randalign.diagnostics import (
    MeanAggregationModel,
    SmoothnessReport,
    UndefinedMetricError,
    influence_score,
    influence_vector,
    influence_walk_deviation,
    mean_pairwise_cosine,
    norm_stats,
)
from randalign.graphs import (
    GraphValidationError,
    graph_from_edge_list,
    lazy_walk_distribution,
    random_connected_graph,
    sbm_generate,
    two_node_fixture,
)
from randalign.layers import ModelConfig
from randalign.model import build_model


class TestMeanPairwiseCosine:
    def test_identical_rows(self):
        assert mean_pairwise_cosine(np.tile([[1.0, 2.0]], (4, 1))) == pytest.approx(1.0)

    def test_orthogonal_rows(self):
        assert mean_pairwise_cosine(np.eye(2)) == pytest.approx(0.0, abs=1e-15)

    def test_three_row_case(self):
        # brute-force pair enumeration: cos pairs are {0, 2^-1/2, 2^-1/2}
        h = np.array([[1.0, 0.0], [0.0, 1.0], [1 / np.sqrt(2), 1 / np.sqrt(2)]])
        expected = (0.0 + np.sqrt(2) / 2 + np.sqrt(2) / 2) / 3
        assert mean_pairwise_cosine(h) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.47140, abs=1e-5)

    def test_zero_rows_excluded(self):
        h = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        assert mean_pairwise_cosine(h) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(7, 3))
        pairs = []
        for u in range(7):
            for v in range(u + 1, 7):
                pairs.append(h[u] @ h[v] / (np.linalg.norm(h[u]) * np.linalg.norm(h[v])))
        assert mean_pairwise_cosine(h) == pytest.approx(np.mean(pairs), abs=1e-12)

    def test_too_few_nonzero_rows(self):
        with pytest.raises(UndefinedMetricError):
            mean_pairwise_cosine(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            val = mean_pairwise_cosine(rng.normal(size=(5, 4)))
            assert -1.0 <= val <= 1.0


class TestNormStats:
    def test_single_row(self):
        assert norm_stats(np.array([[3.0, 4.0]])) == (5.0, 0.0, 5.0, 5.0)

    def test_unit_rows(self):
        assert norm_stats(np.eye(2)) == (1.0, 0.0, 1.0, 1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(6, 3))
        norms = np.linalg.norm(h, axis=1)
        mean, std, lo, hi = norm_stats(h)
        assert mean == pytest.approx(norms.mean())
        assert std == pytest.approx(norms.std())  # population form
        assert lo == pytest.approx(norms.min())
        assert hi == pytest.approx(norms.max())


class TestSmoothnessReport:
    def test_series_lengths_include_layer_zero(self):
        rng = np.random.default_rng(3)
        trace = [rng.normal(size=(4, 3)) for _ in range(5)]
        rep = SmoothnessReport.from_trace(trace)
        assert len(rep.cosine) == 5
        assert len(rep.norm_mean) == 5
        assert rep.final_cosine == rep.cosine[-1]
        assert all(-1.0 <= c <= 1.0 for c in rep.cosine)


class TestInfluence:
    def test_identity_model(self):
        g = random_connected_graph(4, 2, seed=0)
        model = MeanAggregationModel(depth=0)
        x = np.random.default_rng(4).normal(size=(4, 3))
        assert influence_score(model, g, x, 1, 1) == pytest.approx(3.0)
        assert influence_score(model, g, x, 0, 1) == pytest.approx(0.0)

    def test_two_node_single_step(self):
        # lazy mean halves the Jacobian: I_1(0,1) = d_h * 0.5
        model = MeanAggregationModel(depth=1)
        x = np.ones((2, 3))
        assert influence_score(model, two_node_fixture(), x, 0, 1) == pytest.approx(1.5)

    def test_matches_finite_differences_on_small_model(self):
        # identity encoder makes the layer-0 embedding equal the raw input,
        # so bumping the input is a valid oracle for the influence Jacobian
        g = random_connected_graph(4, 3, seed=5)
        cfg = ModelConfig("gcn", depth=2, d_in=3, d_h=3, n_classes=2)
        model = build_model(cfg, seed=9)
        model.encoder.w[:] = np.eye(3)
        model.encoder.bias[:] = 0.0
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 3)) + 0.5
        u, v = 2, 1
        analytic = influence_score(model, g, x, u, v)

        eps = 1e-5
        numeric = 0.0
        for c in range(3):
            for sign in (1.0, -1.0):
                bumped = x.copy()
                bumped[u, c] += sign * eps
                from randalign.autodiff import Tape

                res = model.forward(Tape(), g, bumped)
                numeric += sign * res.final_h.values[v].sum() / (2 * eps)
        assert analytic == pytest.approx(numeric, rel=1e-4)

    def test_influence_vector_matches_scores(self):
        g = random_connected_graph(5, 4, seed=7)
        model = MeanAggregationModel(depth=2)
        x = np.ones((5, 2))
        vec = influence_vector(model, g, x, target=3)
        for v in range(5):
            assert vec[v] == pytest.approx(influence_score(model, g, x, v, 3))


class TestInfluenceWalkAgreement:
    def test_two_node_single_layer(self):
        dev = influence_walk_deviation(two_node_fixture(), depth=1, d_h=4)
        assert dev < 1e-12
        walk = lazy_walk_distribution(two_node_fixture(), 0, 1)
        np.testing.assert_allclose(walk, [0.5, 0.5])

    def test_path_graph_two_layers(self):
        g = graph_from_edge_list(3, [(0, 1), (1, 2)])
        assert influence_walk_deviation(g, depth=2, d_h=3) < 1e-12

    def test_path_graph_against_matrix_power_oracle(self):
        g = graph_from_edge_list(3, [(0, 1), (1, 2)])
        model = MeanAggregationModel(depth=2)
        vec = influence_vector(model, g, np.ones((3, 3)), target=0)
        p = np.array([[1 / 2, 1 / 2, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 2, 1 / 2]])
        np.testing.assert_allclose(vec / vec.sum(), (p @ p)[0], atol=1e-12)

    def test_random_eight_node_graph(self):
        g = random_connected_graph(8, 6, seed=11)
        assert influence_walk_deviation(g, depth=3, d_h=4) < 1e-9

    def test_twenty_seeded_graphs(self):
        rng = np.random.default_rng(99)
        for i in range(20):
            n = int(rng.integers(4, 17))
            g = random_connected_graph(n, int(rng.integers(0, n)), seed=1000 + i)
            depth = int(rng.integers(1, 6))
            assert influence_walk_deviation(g, depth=depth, d_h=3) < 1e-9

    def test_disconnected_rejected(self):
        with pytest.raises(GraphValidationError):
            influence_walk_deviation(graph_from_edge_list(4, [(0, 1), (2, 3)]),
                                     depth=2, d_h=2)


class TestDepthTrend:
    def test_deeper_plain_gcn_smooths_more(self):
        # plain GCN without residuals on the SBM fixture: seed-averaged
        # final-layer cosine rises with depth through 2, 4, 8, 16. Past
        # depth 4 the metric saturates near 1 and wiggles in the third
        # decimal, hence the small slack.
        from randalign.autodiff import Tape

        g, _, x = sbm_generate([10, 10, 10], 0.5, 0.05, noise=0.3, seed=42)
        finals = []
        for depth in (2, 4, 8, 16):
            per_seed = []
            for seed in range(5):
                cfg = ModelConfig("gcn", depth=depth, d_in=3, d_h=8, n_classes=3)
                model = build_model(cfg, seed=seed)
                res = model.forward(Tape(), g, x)
                per_seed.append(mean_pairwise_cosine(res.trace[-1]))
            finals.append(float(np.mean(per_seed)))
        assert all(b >= a - 0.02 for a, b in zip(finals, finals[1:]))
        assert all(f >= finals[0] for f in finals[1:])
        assert all(f >= 0.97 for f in finals[1:])
