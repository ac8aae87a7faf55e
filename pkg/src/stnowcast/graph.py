"""Graph structures, normalized operators, and the convolutional encoder/decoder.

Two normalizations coexist on purpose:

* the standalone `smooth` / `sharpen` operators mix each node with the
  row-normalized neighborhood average (self-loop adjacency divided by the
  self-loop degree), and
* the learned convolution layers propagate with the symmetric form
  ``P = D̃^{-1/2} Ã D̃^{-1/2}`` whose spectrum is better behaved for
  stacked trainable layers.

Both satisfy smooth(x) + sharpen(x) = 2x for the same gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


class GraphError(ValueError):
    pass


@dataclass
class GraphSpec:
    """Node count plus a symmetric, hollow, non-negative adjacency matrix."""

    n: int
    adjacency: np.ndarray
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.shape != (self.n, self.n):
            raise GraphError(f"adjacency shape {self.adjacency.shape} != ({self.n}, {self.n})")
        if not np.allclose(self.adjacency, self.adjacency.T):
            raise GraphError("adjacency must be symmetric")
        if (self.adjacency < 0).any():
            raise GraphError("adjacency must be non-negative")
        if np.diagonal(self.adjacency).any():
            raise GraphError("adjacency diagonal must be zero (self-loops are implicit)")
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(self.n)]
        if len(self.node_ids) != self.n:
            raise GraphError("node_ids length must equal n")

    def degrees(self):
        return self.adjacency.sum(axis=1)


def laplacian(g: GraphSpec) -> np.ndarray:
    """Symmetric normalized Laplacian L = I - D^{-1/2} A D^{-1/2}."""
    d = g.degrees()
    if (d == 0).any():
        raise GraphError("graph has an isolated node; Laplacian normalization is undefined")
    dinv = 1.0 / np.sqrt(d)
    return np.eye(g.n) - dinv[:, None] * g.adjacency * dinv[None, :]


def _self_loop(g: GraphSpec):
    a_tilde = g.adjacency + np.eye(g.n)
    d_tilde = a_tilde.sum(axis=1)
    return a_tilde, d_tilde


def propagation_matrix(g: GraphSpec) -> np.ndarray:
    """Symmetric self-loop propagation P = D̃^{-1/2} Ã D̃^{-1/2}."""
    a_tilde, d_tilde = _self_loop(g)
    dinv = 1.0 / np.sqrt(d_tilde)
    return dinv[:, None] * a_tilde * dinv[None, :]


def neighborhood_average(g: GraphSpec) -> np.ndarray:
    """Row-normalized self-loop operator D̃^{-1} Ã; rows sum to 1."""
    a_tilde, d_tilde = _self_loop(g)
    return a_tilde / d_tilde[:, None]


def _check_features(x, g):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.n:
        raise GraphError(f"features shape {x.shape} incompatible with {g.n}-node graph")
    return x


def smooth(x, g: GraphSpec, gamma: float) -> np.ndarray:
    """Mix each node toward its neighborhood average: (1-γ)x + γ·avg."""
    x = _check_features(x, g)
    if not 0.0 <= gamma <= 1.0:
        raise GraphError(f"gamma must be in [0, 1], got {gamma}")
    return (1.0 - gamma) * x + gamma * (neighborhood_average(g) @ x)


def sharpen(x, g: GraphSpec, gamma: float) -> np.ndarray:
    """Push each node away from its neighborhood average: (1+γ)x - γ·avg."""
    x = _check_features(x, g)
    if not 0.0 <= gamma <= 1.0:
        raise GraphError(f"gamma must be in [0, 1], got {gamma}")
    return (1.0 + gamma) * x - gamma * (neighborhood_average(g) @ x)


def _xavier(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                  requires_grad=True)


class GraphCoder:
    """Two stacked time-distributed graph convolution layers.

    Each layer propagates with (1∓γ)I ± γP (smoothing for the encoder,
    sharpening for the decoder) followed by a linear map; relu between the
    layers, final layer left linear.
    """

    def __init__(self, g: GraphSpec, widths, mode, gamma, rng, dtype=np.float32):
        if mode not in ("smoothing", "sharpening"):
            raise GraphError(f"unknown mode {mode!r}")
        if not 0.0 <= gamma <= 1.0:
            raise GraphError(f"gamma must be in [0, 1], got {gamma}")
        self.g = g
        self.mode = mode
        self.gamma = gamma
        self.widths = list(widths)
        p = propagation_matrix(g)
        eye = np.eye(g.n)
        if mode == "smoothing":
            mix = (1.0 - gamma) * eye + gamma * p
        else:
            mix = (1.0 + gamma) * eye - gamma * p
        self.mix = Tensor(mix.astype(dtype))
        self.weights = [_xavier(rng, a, b, dtype)
                        for a, b in zip(self.widths[:-1], self.widths[1:])]

    def parameters(self):
        return list(self.weights)

    def __call__(self, x: Tensor) -> Tensor:
        """Apply to (..., T, N, C_in); time and batch axes are untouched."""
        if x.shape[-2] != self.g.n or x.shape[-1] != self.widths[0]:
            raise GraphError(
                f"input shape {x.shape} incompatible with graph n={self.g.n}, "
                f"width {self.widths[0]}")
        h = x
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            h = T.matmul(T.matmul(self.mix, h), w)
            if i != last:
                h = T.relu(h)
        return h
