"""Windowing, the self-supervised loss, and the training loop.

Training is teacher-style: the target window is the source window shifted
forward by one frame, so the model learns to nowcast the next frame of
every position in the window. Learning rate halves after five consecutive
epochs without improvement.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import DataError, FrameSeries
from .models import Forecaster
from .tensor import Adam

PLATEAU_PATIENCE = 5
PLATEAU_FACTOR = 0.5
LR_FLOOR = 1e-6
IMPROVEMENT_EPS = 1e-8


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class WindowPair:
    source: np.ndarray  # (T, N, C), frames t-T .. t
    target: np.ndarray  # (T, N, C), frames t-T+1 .. t+1
    end_index: int      # index of the target's last (nowcast) frame


def make_windows(series: FrameSeries, window):
    """Stride-1 sliding window pairs; len(series) - window of them."""
    if series.n_frames < window + 1:
        raise DataError(
            f"series of {series.n_frames} frames too short for window {window}")
    frames = series.frames
    return [WindowPair(frames[k:k + window], frames[k + 1:k + window + 1],
                       k + window)
            for k in range(series.n_frames - window)]


def window_arrays(pairs):
    """Stack window pairs into (B, T, N, C) source/target arrays."""
    src = np.stack([p.source for p in pairs])
    tgt = np.stack([p.target for p in pairs])
    return src, tgt


def loss(pred, target, lam):
    """Weighted reconstruction error plus output-magnitude penalty.

    (lam / T) * sum_t 0.5 * mean((X_t - X̂_t)^2) + (1 - lam) * mean(X̂^2).
    `pred` may be a Tensor (for training) or an array.
    """
    pred = T.as_tensor(pred)
    target = T.as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise T.ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    diff = T.sub(pred, target)
    # mean over node/feature axes then over time == (1/T) sum_t mean_t
    recon = T.mul(T.tmean(T.power(diff, 2.0)), 0.5 * lam)
    penalty = T.mul(T.tmean(T.power(pred, 2.0)), 1.0 - lam)
    return T.add(recon, penalty)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    parameter_checksum: str = ""

    def lines(self):
        yield "epoch,loss,learning_rate"
        for i, (l, lr) in enumerate(zip(self.epoch_losses, self.learning_rates)):
            yield f"{i},{l:.8e},{lr:.8e}"

    def save(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def parameter_checksum(model: Forecaster):
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return h.hexdigest()


def train(model: Forecaster, series: FrameSeries, epochs=None, progress=None):
    """Minimize the windowed loss with ADAM; plateau-halved learning rate.

    Deterministic given the model config seed. Returns a TrainReport;
    the model is updated in place.
    """
    cfg = model.config
    n_epochs = cfg.epochs if epochs is None else epochs
    pairs = make_windows(series, cfg.window)
    src, tgt = window_arrays(pairs)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    report = TrainReport()
    best = np.inf
    stall = 0
    t0 = time.perf_counter()
    for epoch in range(n_epochs):
        order = shuffle_rng.permutation(len(pairs))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred = model.forward(src[idx], training=True)
            batch_loss = loss(pred, tgt[idx], cfg.lam)
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            total += value * len(idx)
        epoch_loss = total / len(pairs)
        report.epoch_losses.append(epoch_loss)
        report.learning_rates.append(optimizer.lr)
        if epoch_loss < best - IMPROVEMENT_EPS:
            best = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= PLATEAU_PATIENCE:
                optimizer.lr = max(optimizer.lr * PLATEAU_FACTOR, LR_FLOOR)
                stall = 0
        if progress is not None:
            progress(epoch, epoch_loss, optimizer.lr)
    report.wall_clock_seconds = time.perf_counter() - t0
    report.parameter_checksum = parameter_checksum(model)
    return report
