import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stnowcast import tensor as T
from stnowcast.graph import (GraphCoder, GraphError, GraphSpec, laplacian,
                             neighborhood_average, propagation_matrix, sharpen,
                             smooth)

from gradcheck import check_gradients


def edge_graph():
    return GraphSpec(2, np.array([[0., 1.], [1., 0.]]))


def random_connected_graph(rng, n):
    """Random spanning tree plus extra edges; always connected."""
    adj = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        adj[order[i], j] = adj[j, order[i]] = 1.0
    for _ in range(n):
        a, b = rng.integers(0, n, size=2)
        if a != b:
            adj[a, b] = adj[b, a] = 1.0
    return GraphSpec(n, adj)


class TestGraphSpec:
    def test_rejects_asymmetric(self):
        with pytest.raises(GraphError):
            GraphSpec(2, np.array([[0., 1.], [0., 0.]]))

    def test_rejects_negative(self):
        with pytest.raises(GraphError):
            GraphSpec(2, np.array([[0., -1.], [-1., 0.]]))

    def test_rejects_self_loops(self):
        with pytest.raises(GraphError):
            GraphSpec(2, np.array([[1., 1.], [1., 0.]]))


class TestLaplacian:
    def test_two_node_hand_value(self):
        assert np.allclose(laplacian(edge_graph()), [[1., -1.], [-1., 1.]])

    def test_zero_adjacency_degenerate(self):
        with pytest.raises(GraphError):
            laplacian(GraphSpec(3, np.zeros((3, 3))))

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        for n in (2, 4, 6):
            L = laplacian(random_connected_graph(rng, n))
            assert np.allclose(L, L.T)

    def test_eigenvalues_in_zero_two(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            evals = np.linalg.eigvalsh(laplacian(random_connected_graph(rng, n)))
            assert evals.min() >= -1e-8
            assert evals.max() <= 2 + 1e-8


class TestPropagation:
    def test_two_node_hand_value(self):
        assert np.allclose(propagation_matrix(edge_graph()), [[0.5, 0.5], [0.5, 0.5]])

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        p = propagation_matrix(random_connected_graph(rng, 5))
        assert np.allclose(p, p.T)

    def test_single_node(self):
        assert np.allclose(propagation_matrix(GraphSpec(1, np.zeros((1, 1)))), [[1.0]])

    def test_row_normalized_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        avg = neighborhood_average(random_connected_graph(rng, 6))
        assert np.allclose(avg.sum(axis=1), 1.0)


class TestSmoothSharpen:
    def test_gamma_zero_identity(self):
        g = edge_graph()
        x = np.array([[1.5], [-2.0]])
        assert np.allclose(smooth(x, g, 0.0), x)
        assert np.allclose(sharpen(x, g, 0.0), x)

    def test_two_node_hand_values(self):
        g = edge_graph()
        x = np.array([[0.], [2.]])
        assert np.allclose(smooth(x, g, 1.0), [[1.], [1.]])
        assert np.allclose(sharpen(x, g, 1.0), [[-1.], [3.]])

    def test_constant_preserved(self):
        rng = np.random.default_rng(4)
        g = random_connected_graph(rng, 5)
        x = np.full((5, 3), 2.5)
        for gamma in (0.0, 0.3, 1.0):
            assert np.allclose(smooth(x, g, gamma), x)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=10**6),
           st.floats(min_value=0.0, max_value=1.0))
    def test_smooth_plus_sharpen_is_twice_input(self, n, seed, gamma):
        rng = np.random.default_rng(seed)
        g = random_connected_graph(rng, n)
        x = rng.normal(size=(n, 3))
        assert np.allclose(smooth(x, g, gamma) + sharpen(x, g, gamma), 2 * x,
                           atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(GraphError):
            smooth(np.zeros((3, 2)), edge_graph(), 0.5)


class TestGraphCoder:
    def test_gamma_zero_reduces_to_linear_map(self):
        g = edge_graph()
        rng = np.random.default_rng(5)
        enc = GraphCoder(g, [3, 2], "smoothing", 0.0, rng, dtype=np.float64)
        x = rng.normal(size=(1, 2, 3))
        out = enc(T.Tensor(x))
        assert np.allclose(out.data, x @ enc.weights[0].data)

    def test_hand_computed_single_layer(self):
        g = edge_graph()
        rng = np.random.default_rng(6)
        enc = GraphCoder(g, [2, 2], "smoothing", 0.5, rng, dtype=np.float64)
        theta = np.array([[1.0, 0.5], [0.0, 2.0]])
        enc.weights[0].data = theta
        x = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        mix = 0.5 * np.eye(2) + 0.5 * propagation_matrix(g)
        assert np.allclose(enc(T.Tensor(x)).data, mix @ x[0] @ theta)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        g = random_connected_graph(rng, 5)
        enc = GraphCoder(g, [3, 6, 2], "smoothing", 0.5, rng, dtype=np.float64)
        perm = rng.permutation(5)
        g_perm = GraphSpec(5, g.adjacency[np.ix_(perm, perm)])
        enc_perm = GraphCoder(g_perm, [3, 6, 2], "smoothing", 0.5,
                              np.random.default_rng(7), dtype=np.float64)
        for w, w2 in zip(enc.weights, enc_perm.weights):
            w2.data = w.data.copy()
        x = rng.normal(size=(2, 5, 3))
        out = enc(T.Tensor(x)).data
        out_perm = enc_perm(T.Tensor(x[:, perm])).data
        assert np.allclose(out_perm, out[:, perm], atol=1e-5)

    def test_time_distributed(self):
        rng = np.random.default_rng(8)
        g = random_connected_graph(rng, 4)
        enc = GraphCoder(g, [2, 4, 3], "smoothing", 0.5, rng, dtype=np.float64)
        x = rng.normal(size=(6, 4, 2))
        shuffle = rng.permutation(6)
        out = enc(T.Tensor(x)).data
        out_shuffled = enc(T.Tensor(x[shuffle])).data
        assert np.array_equal(out_shuffled, out[shuffle])

    def test_decoder_inverts_encoder_linear_case(self):
        # gamma=0 single layer: decoder with pseudo-inverse weights recovers x
        g = edge_graph()
        rng = np.random.default_rng(9)
        enc = GraphCoder(g, [3, 3], "smoothing", 0.0, rng, dtype=np.float64)
        dec = GraphCoder(g, [3, 3], "sharpening", 0.0, rng, dtype=np.float64)
        dec.weights[0].data = np.linalg.pinv(enc.weights[0].data)
        x = rng.normal(size=(1, 2, 3))
        assert np.allclose(dec(enc(T.Tensor(x))).data, x, atol=1e-8)

    def test_shape_contract(self):
        rng = np.random.default_rng(10)
        g = random_connected_graph(rng, 4)
        dec = GraphCoder(g, [2, 4, 3], "sharpening", 0.5, rng)
        out = dec(T.Tensor(rng.normal(size=(5, 4, 2)).astype(np.float32)))
        assert out.shape == (5, 4, 3)

    def test_config_mismatch(self):
        rng = np.random.default_rng(11)
        enc = GraphCoder(edge_graph(), [3, 2], "smoothing", 0.5, rng)
        with pytest.raises(GraphError):
            enc(T.Tensor(np.zeros((1, 2, 4), dtype=np.float32)))

    def test_gradcheck_smoothing_and_sharpening(self):
        rng = np.random.default_rng(12)
        g = random_connected_graph(rng, 3)
        for mode in ("smoothing", "sharpening"):
            coder = GraphCoder(g, [2, 4, 2], mode, 0.5,
                               np.random.default_rng(0), dtype=np.float64)

            def build(v, coder=coder):
                coder.weights[0] = v["w0"]
                coder.weights[1] = v["w1"]
                return T.tmean(T.power(coder(v["x"]), 2.0))

            check_gradients(build, {
                "x": rng.normal(size=(2, 3, 2)),
                "w0": rng.normal(size=(2, 4)),
                "w1": rng.normal(size=(4, 2)),
            })
