import dataclasses

import numpy as np
import pytest

from stnowcast import tensor as T
from stnowcast.data import build_grid_graph
from stnowcast.models import (ConfigError, LSTMCell, ModelConfig, build_model,
                              load_checkpoint, save_checkpoint)
from stnowcast.tensor import Tensor

from gradcheck import check_gradients
from perm_utils import permuted_model

ALL_KINDS = ["gtrans", "mlp-ae", "lstm-ae", "gcn-lstm"]


@pytest.fixture
def graph():
    return build_grid_graph(0.0, 1.0, 0.0, 1.0, 2, 2)


def config(**kw):
    base = dict(window=4, n_nodes=4, features=2, embed_dim=2, heads=2,
                epochs=2, batch_size=8, seed=1, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


class TestModelConfig:
    def test_window_too_small(self):
        with pytest.raises(ConfigError):
            config(window=1).validate()

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            config(heads=3).validate()

    def test_lambda_range(self):
        with pytest.raises(ConfigError):
            config(lam=1.5).validate()

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            config(kind="vanilla").validate()


class TestForwardContracts:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_shape_contract(self, graph, kind):
        model = build_model(config(kind=kind), graph)
        x = np.random.default_rng(0).random((4, 4, 2)).astype(np.float32)
        assert model.predict(x).shape == (4, 4, 2)
        batched = np.stack([x, x, x])
        assert model.predict(batched).shape == (3, 4, 4, 2)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_seed_determinism(self, graph, kind):
        x = np.random.default_rng(1).random((4, 4, 2)).astype(np.float32)
        outs = []
        for _ in range(2):
            model = build_model(config(kind=kind), graph)
            outs.append(model.predict(x))
        assert np.array_equal(outs[0], outs[1])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_shape_mismatch_rejected(self, graph, kind):
        model = build_model(config(kind=kind), graph)
        with pytest.raises(T.ShapeError):
            model.predict(np.zeros((4, 3, 2), dtype=np.float32))

    def test_graph_node_count_mismatch(self, graph):
        with pytest.raises(ConfigError):
            build_model(config(n_nodes=5, embed_dim=2, heads=2), graph)


class TestGraphComponentParity:
    def test_gtrans_and_gcn_lstm_graph_params_equal(self, graph):
        gt = build_model(config(kind="gtrans"), graph)
        gl = build_model(config(kind="gcn-lstm"), graph)
        assert gt.graph_parameter_count() == gl.graph_parameter_count()
        shapes = lambda m: [p.data.shape for p in (m.graph_encoder.parameters()
                                                   + m.graph_decoder.parameters())]
        assert shapes(gt) == shapes(gl)


class TestPermutationEquivariance:
    @pytest.mark.parametrize("kind", ["gtrans", "gcn-lstm"])
    def test_forward_commutes_with_node_permutation(self, graph, kind):
        cfg = config(kind=kind, heads=1)
        model = build_model(cfg, graph)
        rng = np.random.default_rng(3)
        perm = rng.permutation(4)
        twin = permuted_model(model, perm)
        x = rng.random((3, 4, 4, 2)).astype(np.float32)
        out = model.predict(x)
        out_perm = twin.predict(x[:, :, perm])
        assert np.allclose(out_perm, out[:, :, perm], atol=1e-5)


class TestLSTMCell:
    def test_forget_bias_init(self):
        cell = LSTMCell(3, 4, np.random.default_rng(0))
        assert np.allclose(cell.b.data[4:8], 1.0)
        assert not cell.b.data[:4].any()

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        cell = LSTMCell(2, 3, np.random.default_rng(0), dtype=np.float64)

        def build(v):
            cell.w, cell.u, cell.b = v["w"], v["u"], v["b"]
            steps = [v["x0"], v["x1"], v["x2"]]
            outs = cell.run(steps)
            total = outs[0]
            for h in outs[1:]:
                total = T.add(total, h)
            return T.tmean(T.power(total, 2.0))

        check_gradients(build, {
            "w": rng.normal(size=(2, 12)) * 0.5,
            "u": rng.normal(size=(3, 12)) * 0.5,
            "b": rng.normal(size=(12,)) * 0.1,
            "x0": rng.normal(size=(2, 2)),
            "x1": rng.normal(size=(2, 2)),
            "x2": rng.normal(size=(2, 2)),
        })


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_round_trip_bit_exact(self, graph, kind, tmp_path):
        model = build_model(config(kind=kind), graph)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path, graph)
        assert loaded.config == model.config
        for (n1, p1), (n2, p2) in zip(model.named_parameters(),
                                      loaded.named_parameters()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)
        x = np.random.default_rng(5).random((4, 4, 2)).astype(np.float32)
        assert np.array_equal(model.predict(x), loaded.predict(x))

    def test_save_is_deterministic(self, graph, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        save_checkpoint(build_model(config(), graph), a)
        save_checkpoint(build_model(config(), graph), b)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_magic_rejected(self, graph, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"nope" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_checkpoint(path, graph)

    def test_wrong_graph_rejected(self, tmp_path):
        g4 = build_grid_graph(0, 1, 0, 1, 2, 2)
        g6 = build_grid_graph(0, 1, 0, 1, 2, 3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(build_model(config(), g4), path)
        with pytest.raises(ConfigError):
            load_checkpoint(path, g6)


class TestDropoutBehaviour:
    def test_training_noise_eval_stable(self, graph):
        cfg = config(kind="gtrans", dropout=0.3)
        model = build_model(cfg, graph)
        x = np.random.default_rng(6).random((4, 4, 2)).astype(np.float32)
        train1 = model.forward(x, training=True).data
        train2 = model.forward(x, training=True).data
        assert not np.array_equal(train1, train2)
        assert np.array_equal(model.predict(x), model.predict(x))
