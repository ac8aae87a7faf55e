"""Positional embedding, multi-head self-attention, and encoder/decoder stacks.

The sequence axis is time. Node embeddings for a step are flattened into a
single model-dimension vector (fixed node order, row-major over nodes then
embedding channels), so model_dim = n_nodes * embed_dim.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

# Additive mask value: large enough that exp() underflows to exactly 0 after
# the softmax max-shift, keeping masked attention weights bit-zero while the
# tensors stay finite.
MASK_VALUE = -1e9


def causal_mask(t):
    """Boolean T×T mask, True above the diagonal (future positions)."""
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def _xavier(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class PositionalEmbedding:
    """z_t = E x_t + e_pos[t]: trainable projection plus position table.

    The position table starts at zero so the embedding reduces to the
    projection at initialization.
    """

    def __init__(self, input_dim, model_dim, max_len, rng, dtype=np.float32):
        self.max_len = max_len
        self.proj = _xavier(rng, input_dim, model_dim, dtype)
        self.pos = _zeros((max_len, model_dim), dtype)

    def parameters(self):
        return [self.proj, self.pos]

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        if t > self.max_len:
            raise ShapeError(f"window length {t} exceeds position table {self.max_len}")
        z = T.matmul(x, self.proj)
        return T.add(z, T.slice_axis(self.pos, 0, 0, t))


class MultiHeadAttention:
    """Scaled dot-product attention split over heads.

    Query/key/value come from one joint projection H_qkv sliced evenly per
    head; head outputs are concatenated and mixed by H_msa.
    """

    def __init__(self, model_dim, heads, rng, dtype=np.float32):
        if model_dim % heads != 0:
            raise ShapeError(f"model_dim {model_dim} not divisible by heads {heads}")
        self.model_dim = model_dim
        self.heads = heads
        self.head_dim = model_dim // heads
        self.h_qkv = _xavier(rng, model_dim, 3 * model_dim, dtype)
        self.h_msa = _xavier(rng, model_dim, model_dim, dtype)
        self.last_weights = None  # numpy copy of the most recent attention map

    def parameters(self):
        return [self.h_qkv, self.h_msa]

    def __call__(self, z_q: Tensor, z_kv: Tensor, mask=None, p_drop=0.0,
                 rng=None, training=False) -> Tensor:
        """Attend queries from z_q over keys/values from z_kv.

        Self-attention passes the same tensor twice; cross-attention passes
        the decoder stream and the encoder memory.
        """
        d = self.model_dim
        qkv_q = T.matmul(z_q, self.h_qkv)
        qkv_kv = qkv_q if z_kv is z_q else T.matmul(z_kv, self.h_qkv)
        q = T.slice_axis(qkv_q, -1, 0, d)
        k = T.slice_axis(qkv_kv, -1, d, 2 * d)
        v = T.slice_axis(qkv_kv, -1, 2 * d, 3 * d)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (z_q.shape[-2], z_kv.shape[-2]):
                raise ShapeError(
                    f"mask shape {mask.shape} != ({z_q.shape[-2]}, {z_kv.shape[-2]})")
        outs = []
        weights = []
        scale = 1.0 / np.sqrt(self.head_dim)
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = T.slice_axis(q, -1, lo, hi)
            kh = T.slice_axis(k, -1, lo, hi)
            vh = T.slice_axis(v, -1, lo, hi)
            logits = T.mul(T.matmul(qh, T.transpose(kh)), scale)
            if mask is not None:
                logits = T.masked_fill(logits, mask, MASK_VALUE)
            attn = T.softmax(logits, axis=-1)
            weights.append(attn.data)
            if p_drop > 0.0 and training:
                attn = T.dropout(attn, p_drop, rng, training)
            outs.append(T.matmul(attn, vh))
        self.last_weights = weights
        return T.matmul(T.concat(outs, axis=-1), self.h_msa)


class FeedForward:
    def __init__(self, model_dim, hidden_dim, rng, dtype=np.float32):
        self.w1 = _xavier(rng, model_dim, hidden_dim, dtype)
        self.b1 = _zeros((hidden_dim,), dtype)
        self.w2 = _xavier(rng, hidden_dim, model_dim, dtype)
        self.b2 = _zeros((model_dim,), dtype)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, z):
        h = T.relu(T.add(T.matmul(z, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)


class _Norm:
    def __init__(self, model_dim, dtype):
        self.gain = Tensor(np.ones(model_dim, dtype=dtype), requires_grad=True)
        self.bias = _zeros((model_dim,), dtype)

    def parameters(self):
        return [self.gain, self.bias]

    def __call__(self, z):
        return T.layer_norm(z, self.gain, self.bias)


class EncoderBlock:
    """Pre-norm residual block: z + MSA(LN(z)), then z + FF(LN(z))."""

    def __init__(self, model_dim, heads, ff_dim, rng, dtype=np.float32):
        self.norm1 = _Norm(model_dim, dtype)
        self.attn = MultiHeadAttention(model_dim, heads, rng, dtype)
        self.norm2 = _Norm(model_dim, dtype)
        self.ff = FeedForward(model_dim, ff_dim, rng, dtype)

    def parameters(self):
        return (self.norm1.parameters() + self.attn.parameters()
                + self.norm2.parameters() + self.ff.parameters())

    def __call__(self, z, p_drop=0.0, rng=None, training=False):
        h = self.norm1(z)
        z = T.add(z, self.attn(h, h, p_drop=p_drop, rng=rng, training=training))
        h = T.dropout(self.ff(self.norm2(z)), p_drop, rng, training)
        return T.add(z, h)


class DecoderBlock:
    """Causally masked self-attention, cross-attention over memory, feedforward."""

    def __init__(self, model_dim, heads, ff_dim, rng, dtype=np.float32):
        self.norm1 = _Norm(model_dim, dtype)
        self.self_attn = MultiHeadAttention(model_dim, heads, rng, dtype)
        self.norm2 = _Norm(model_dim, dtype)
        self.cross_attn = MultiHeadAttention(model_dim, heads, rng, dtype)
        self.norm3 = _Norm(model_dim, dtype)
        self.ff = FeedForward(model_dim, ff_dim, rng, dtype)

    def parameters(self):
        return (self.norm1.parameters() + self.self_attn.parameters()
                + self.norm2.parameters() + self.cross_attn.parameters()
                + self.norm3.parameters() + self.ff.parameters())

    def __call__(self, z, memory, mask, p_drop=0.0, rng=None, training=False):
        h = self.norm1(z)
        z = T.add(z, self.self_attn(h, h, mask=mask, p_drop=p_drop, rng=rng,
                                    training=training))
        z = T.add(z, self.cross_attn(self.norm2(z), memory, p_drop=p_drop,
                                     rng=rng, training=training))
        h = T.dropout(self.ff(self.norm3(z)), p_drop, rng, training)
        return T.add(z, h)


class TemporalProjection:
    """Per-time-step linear map from model_dim back to the flattened width."""

    def __init__(self, model_dim, out_dim, rng, dtype=np.float32):
        self.w = _xavier(rng, model_dim, out_dim, dtype)
        self.b = _zeros((out_dim,), dtype)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, h):
        return T.add(T.matmul(h, self.w), self.b)


class TransformerAutoencoder:
    """Encoder/decoder stacks over flattened per-step node embeddings.

    encode() produces the memory context; decode() runs causally masked
    self-attention on the (self-conditioned) target stream plus
    cross-attention on the memory, then projects back to the flattened
    embedding width.
    """

    def __init__(self, n_nodes, embed_dim, window, heads, n_encoder, n_decoder,
                 rng, dropout=0.0, dtype=np.float32):
        self.n_nodes = n_nodes
        self.embed_dim = embed_dim
        self.window = window
        self.model_dim = n_nodes * embed_dim
        self.dropout = dropout
        ff = 4 * self.model_dim
        self.embed = PositionalEmbedding(self.model_dim, self.model_dim, window,
                                         rng, dtype)
        self.enc_blocks = [EncoderBlock(self.model_dim, heads, ff, rng, dtype)
                           for _ in range(n_encoder)]
        self.dec_blocks = [DecoderBlock(self.model_dim, heads, ff, rng, dtype)
                           for _ in range(n_decoder)]
        self.out_norm = _Norm(self.model_dim, dtype)
        self.project = TemporalProjection(self.model_dim, self.model_dim, rng, dtype)

    def parameters(self):
        ps = self.embed.parameters()
        for b in self.enc_blocks:
            ps += b.parameters()
        for b in self.dec_blocks:
            ps += b.parameters()
        ps += self.out_norm.parameters()
        ps += self.project.parameters()
        return ps

    def _flatten(self, e):
        lead = e.shape[:-2]
        return T.reshape(e, lead + (self.model_dim,))

    def _unflatten(self, z):
        lead = z.shape[:-1]
        return T.reshape(z, lead + (self.n_nodes, self.embed_dim))

    def encode(self, e, rng=None, training=False):
        """(..., T, N, D) embeddings -> same-shape memory context."""
        z = self.embed(self._flatten(e))
        for blk in self.enc_blocks:
            z = blk(z, p_drop=self.dropout, rng=rng, training=training)
        return self._unflatten(z)

    def decode(self, tgt, memory, rng=None, training=False):
        """Nowcast the shifted embedding window from tgt and the memory."""
        t = tgt.shape[-3]
        mask = causal_mask(t)
        z = self.embed(self._flatten(tgt))
        mem = self._flatten(memory)
        for blk in self.dec_blocks:
            z = blk(z, mem, mask, p_drop=self.dropout, rng=rng, training=training)
        z = self.project(self.out_norm(z))
        return self._unflatten(z)
