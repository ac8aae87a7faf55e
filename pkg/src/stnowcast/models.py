"""The four forecaster kinds behind one interface, plus checkpoint I/O.

Every model maps a source window (T, N, C) to a same-shape prediction of
the window shifted one step ahead. Shapes are identical across kinds so
the training loop, detector, and evaluation harness run unchanged.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .graph import GraphCoder, GraphSpec
from .tensor import ShapeError, Tensor
from .transformer import TransformerAutoencoder

MODEL_KINDS = ("gtrans", "mlp-ae", "lstm-ae", "gcn-lstm")

CHECKPOINT_MAGIC = b"STNC"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    window: int = 10
    n_nodes: int = 16
    features: int = 3
    embed_dim: int = 4
    heads: int = 4
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    gamma: float = 0.5
    lam: float = 0.9
    dropout: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    kind: str = "gtrans"

    def validate(self):
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.embed_dim < 1 or self.n_nodes < 1 or self.features < 1:
            raise ConfigError("n_nodes, features, embed_dim must be >= 1")
        if (self.n_nodes * self.embed_dim) % self.heads != 0:
            raise ConfigError(
                f"model dim {self.n_nodes * self.embed_dim} not divisible by "
                f"{self.heads} heads")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        return self


def _xavier(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                  requires_grad=True)


class LSTMCell:
    """Standard LSTM cell; gate order i, f, o, g; forget-gate bias starts at 1."""

    def __init__(self, input_dim, hidden_dim, rng, dtype=np.float32):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w = _xavier(rng, input_dim, 4 * hidden_dim, dtype)
        self.u = _xavier(rng, hidden_dim, 4 * hidden_dim, dtype)
        b = np.zeros(4 * hidden_dim, dtype=dtype)
        b[hidden_dim:2 * hidden_dim] = 1.0
        self.b = Tensor(b, requires_grad=True)

    def parameters(self):
        return [self.w, self.u, self.b]

    def step(self, x, h, c):
        hd = self.hidden_dim
        gates = T.add(T.add(T.matmul(x, self.w), T.matmul(h, self.u)), self.b)
        i = T.sigmoid(T.slice_axis(gates, -1, 0, hd))
        f = T.sigmoid(T.slice_axis(gates, -1, hd, 2 * hd))
        o = T.sigmoid(T.slice_axis(gates, -1, 2 * hd, 3 * hd))
        g = T.tanh(T.slice_axis(gates, -1, 3 * hd, 4 * hd))
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return h, c

    def run(self, xs):
        """xs: list of (B, input_dim) steps -> list of (B, hidden_dim) outputs."""
        b = xs[0].shape[0]
        dtype = self.w.dtype
        h = Tensor(np.zeros((b, self.hidden_dim), dtype=dtype))
        c = Tensor(np.zeros((b, self.hidden_dim), dtype=dtype))
        outs = []
        for x in xs:
            h, c = self.step(x, h, c)
            outs.append(h)
        return outs


def _split_time(x):
    """(B, T, F) tensor -> list of T tensors (B, F)."""
    t = x.shape[1]
    return [T.reshape(T.slice_axis(x, 1, i, i + 1), (x.shape[0], x.shape[2]))
            for i in range(t)]


def _stack_time(steps):
    """list of T tensors (B, F) -> (B, T, F)."""
    b, f = steps[0].shape
    expanded = [T.reshape(s, (b, 1, f)) for s in steps]
    return T.concat(expanded, axis=1)


class Forecaster:
    """Base class: batched forward plus named-parameter bookkeeping."""

    def __init__(self, config: ModelConfig, g: GraphSpec, dtype=np.float32):
        config.validate()
        if g.n != config.n_nodes:
            raise ConfigError(f"graph has {g.n} nodes, config says {config.n_nodes}")
        self.config = config
        self.g = g
        self.dtype = dtype
        self.rng = np.random.default_rng(config.seed)
        self._named = []

    def _register(self, prefix, params):
        for i, p in enumerate(params):
            self._named.append((f"{prefix}.{i}", p))
        return params

    def named_parameters(self):
        return list(self._named)

    def parameters(self):
        return [p for _, p in self._named]

    def parameter_count(self):
        return sum(p.data.size for p in self.parameters())

    def forward(self, x, training=False):
        """x: (T, N, C) or (B, T, N, C) numpy/Tensor -> same-shape prediction."""
        x = T.as_tensor(x)
        cfg = self.config
        single = x.ndim == 3
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[2] != cfg.n_nodes or x.shape[3] != cfg.features:
            raise ShapeError(
                f"expected (B, T, {cfg.n_nodes}, {cfg.features}), got {x.shape}")
        out = self._forward(x, training)
        if single:
            out = T.reshape(out, out.shape[1:])
        return out

    def predict(self, x):
        """Evaluation-mode forward returning a plain numpy array."""
        return self.forward(x, training=False).data

    def _forward(self, x, training):
        raise NotImplementedError


class GTransForecaster(Forecaster):
    """Graph encoder -> transformer autoencoder -> graph decoder."""

    def __init__(self, config, g, dtype=np.float32):
        super().__init__(config, g, dtype)
        c, d = config.features, config.embed_dim
        hidden = 2 * d
        self.graph_encoder = GraphCoder(g, [c, hidden, d], "smoothing",
                                        config.gamma, self.rng, dtype)
        self.graph_decoder = GraphCoder(g, [d, hidden, c], "sharpening",
                                        config.gamma, self.rng, dtype)
        self.trans = TransformerAutoencoder(
            g.n, d, config.window, config.heads, config.encoder_blocks,
            config.decoder_blocks, self.rng, dropout=config.dropout, dtype=dtype)
        self._register("graph_encoder", self.graph_encoder.parameters())
        self._register("graph_decoder", self.graph_decoder.parameters())
        self._register("transformer", self.trans.parameters())

    def graph_parameter_count(self):
        return sum(p.data.size for p in (self.graph_encoder.parameters()
                                         + self.graph_decoder.parameters()))

    def _forward(self, x, training):
        e = self.graph_encoder(x)
        memory = self.trans.encode(e, rng=self.rng, training=training)
        e_hat = self.trans.decode(e, memory, rng=self.rng, training=training)
        return self.graph_decoder(e_hat)

    def encode_memory(self, x):
        """Transformer-encoder memory for latent export, (B, T, N, D)."""
        x = T.as_tensor(x)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        e = self.graph_encoder(x)
        return self.trans.encode(e, training=False).data


class MlpAeForecaster(Forecaster):
    """Time-distributed dense encoder, one linear map over the flattened
    window for temporal mixing, mirrored dense decoder. Ignores the graph."""

    def __init__(self, config, g, dtype=np.float32):
        super().__init__(config, g, dtype)
        c, d, n, t = config.features, config.embed_dim, config.n_nodes, config.window
        self.enc_w = _xavier(self.rng, c, d, dtype)
        self.enc_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        flat = t * n * d
        self.mix_w = _xavier(self.rng, flat, flat, dtype)
        self.mix_b = Tensor(np.zeros(flat, dtype=dtype), requires_grad=True)
        self.dec_w = _xavier(self.rng, d, c, dtype)
        self.dec_b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self._register("encoder", [self.enc_w, self.enc_b])
        self._register("projection", [self.mix_w, self.mix_b])
        self._register("decoder", [self.dec_w, self.dec_b])

    def _forward(self, x, training):
        cfg = self.config
        b = x.shape[0]
        h = T.relu(T.add(T.matmul(x, self.enc_w), self.enc_b))
        flat = T.reshape(h, (b, cfg.window * cfg.n_nodes * cfg.embed_dim))
        flat = T.add(T.matmul(flat, self.mix_w), self.mix_b)
        h = T.reshape(flat, (b, cfg.window, cfg.n_nodes, cfg.embed_dim))
        return T.add(T.matmul(h, self.dec_w), self.dec_b)


class LstmAeForecaster(Forecaster):
    """Stacked recurrent encoder; final hidden state repeated T times and
    decoded by mirrored recurrent layers. Ignores the graph."""

    N_LAYERS = 2

    def __init__(self, config, g, dtype=np.float32):
        super().__init__(config, g, dtype)
        in_dim = config.n_nodes * config.features
        hid = config.n_nodes * config.embed_dim
        self.enc_cells = []
        prev = in_dim
        for i in range(self.N_LAYERS):
            cell = LSTMCell(prev, hid, self.rng, dtype)
            self.enc_cells.append(cell)
            self._register(f"encoder_lstm{i}", cell.parameters())
            prev = hid
        self.dec_cells = []
        for i in range(self.N_LAYERS):
            cell = LSTMCell(hid, hid, self.rng, dtype)
            self.dec_cells.append(cell)
            self._register(f"decoder_lstm{i}", cell.parameters())
        self.out_w = _xavier(self.rng, hid, in_dim, dtype)
        self.out_b = Tensor(np.zeros(in_dim, dtype=dtype), requires_grad=True)
        self._register("output", [self.out_w, self.out_b])

    def _forward(self, x, training):
        cfg = self.config
        b, t = x.shape[0], x.shape[1]
        seq = T.reshape(x, (b, t, cfg.n_nodes * cfg.features))
        steps = _split_time(seq)
        for cell in self.enc_cells:
            steps = cell.run(steps)
        final = steps[-1]
        steps = [final] * t
        for cell in self.dec_cells:
            steps = cell.run(steps)
        out = _stack_time(steps)
        out = T.add(T.matmul(out, self.out_w), self.out_b)
        return T.reshape(out, (b, t, cfg.n_nodes, cfg.features))


class GcnLstmForecaster(Forecaster):
    """GTrans with the transformer swapped for a single recurrent layer;
    the graph encoder/decoder are parameter-shaped identically to GTrans'."""

    def __init__(self, config, g, dtype=np.float32):
        super().__init__(config, g, dtype)
        c, d = config.features, config.embed_dim
        hidden = 2 * d
        self.graph_encoder = GraphCoder(g, [c, hidden, d], "smoothing",
                                        config.gamma, self.rng, dtype)
        self.graph_decoder = GraphCoder(g, [d, hidden, c], "sharpening",
                                        config.gamma, self.rng, dtype)
        hid = g.n * d
        self.cell = LSTMCell(hid, hid, self.rng, dtype)
        self._register("graph_encoder", self.graph_encoder.parameters())
        self._register("graph_decoder", self.graph_decoder.parameters())
        self._register("lstm", self.cell.parameters())

    def graph_parameter_count(self):
        return sum(p.data.size for p in (self.graph_encoder.parameters()
                                         + self.graph_decoder.parameters()))

    def _forward(self, x, training):
        cfg = self.config
        b, t = x.shape[0], x.shape[1]
        e = self.graph_encoder(x)
        seq = T.reshape(e, (b, t, cfg.n_nodes * cfg.embed_dim))
        steps = self.cell.run(_split_time(seq))
        h = T.reshape(_stack_time(steps), (b, t, cfg.n_nodes, cfg.embed_dim))
        return self.graph_decoder(h)


_MODEL_CLASSES = {
    "gtrans": GTransForecaster,
    "mlp-ae": MlpAeForecaster,
    "lstm-ae": LstmAeForecaster,
    "gcn-lstm": GcnLstmForecaster,
}


def build_model(config: ModelConfig, g: GraphSpec, dtype=np.float32) -> Forecaster:
    config.validate()
    return _MODEL_CLASSES[config.kind](config, g, dtype)


# -- checkpoint container -------------------------------------------------


def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_str(buf):
    (n,) = struct.unpack("<I", buf.read(4))
    return buf.read(n).decode("utf-8")


def save_checkpoint(model: Forecaster, path):
    """Versioned binary: header (version, kind, config), then named
    parameter records as little-endian float32. Bit-exact round trip."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    _write_str(buf, model.config.kind)
    _write_str(buf, json.dumps(asdict(model.config), sort_keys=True))
    named = model.named_parameters()
    buf.write(struct.pack("<I", len(named)))
    for name, p in named:
        _write_str(buf, name)
        buf.write(struct.pack("<I", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, g: GraphSpec) -> Forecaster:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    kind = _read_str(buf)
    config = ModelConfig(**json.loads(_read_str(buf)))
    if config.kind != kind:
        raise ValueError(f"{path}: header kind {kind!r} != config kind {config.kind!r}")
    model = build_model(config, g)
    (count,) = struct.unpack("<I", buf.read(4))
    named = dict(model.named_parameters())
    if count != len(named):
        raise ValueError(f"{path}: expected {len(named)} parameters, found {count}")
    for _ in range(count):
        name = _read_str(buf)
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(buf.read(4 * size), dtype="<f4").reshape(shape)
        if name not in named:
            raise ValueError(f"{path}: unexpected parameter {name!r}")
        if named[name].data.shape != shape:
            raise ValueError(f"{path}: parameter {name!r} shape {shape} != "
                             f"{named[name].data.shape}")
        named[name].data = data.astype(np.float32).copy()
    return model
