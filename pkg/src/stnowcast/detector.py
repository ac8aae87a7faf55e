"""Reconstruction-error statistics, Mahalanobis scoring, and thresholding.

Scoring is per nowcast frame: for each window the model predicts the
shifted window, and only the last predicted frame is genuinely unseen, so
the error vector is |actual - predicted| of that frame, flattened to
length N*C.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .data import FrameSeries
from .models import Forecaster
from .training import make_windows, window_arrays

ARTIFACTS_MAGIC = b"STNA"
ARTIFACTS_VERSION = 1

RIDGE_SCALE = 1e-6

THRESHOLD_METHODS = ("quantile", "scaled-mean")


class DetectorError(ValueError):
    pass


@dataclass
class DetectionArtifacts:
    mean: np.ndarray        # (N*C,)
    cov: np.ndarray         # (N*C, N*C), ridge-regularized
    cov_inv: np.ndarray
    threshold: float
    method: str
    extreme_rate: float

    def __post_init__(self):
        if self.threshold < 0:
            raise DetectorError("threshold must be non-negative")
        if self.method not in THRESHOLD_METHODS:
            raise DetectorError(f"unknown threshold method {self.method!r}")


def reconstruction_errors(model: Forecaster, series: FrameSeries, batch_size=64):
    """Absolute nowcast errors, one (N*C,) vector per window.

    Returns (errors, frame_indices) where frame_indices[i] is the series
    index of the frame each error vector scores.
    """
    pairs = make_windows(series, model.config.window)
    src, tgt = window_arrays(pairs)
    errors = []
    for lo in range(0, len(pairs), batch_size):
        pred = model.predict(src[lo:lo + batch_size])
        err = np.abs(tgt[lo:lo + batch_size, -1] - pred[:, -1])
        errors.append(err.reshape(err.shape[0], -1))
    frame_indices = np.array([p.end_index for p in pairs])
    return np.concatenate(errors).astype(np.float64), frame_indices


def fit_statistics(errors):
    """Sample mean and (n-1)-divisor covariance with a trace-scaled ridge."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or len(errors) < 2:
        raise DetectorError("need at least 2 error vectors")
    mu = errors.mean(axis=0)
    centered = errors - mu
    cov = centered.T @ centered / (len(errors) - 1)
    dim = cov.shape[0]
    ridge = RIDGE_SCALE * np.trace(cov) / dim
    if ridge == 0.0:
        ridge = RIDGE_SCALE
    cov = cov + ridge * np.eye(dim)
    return mu, cov


def mahalanobis(e, mu, cov_inv):
    """sqrt((e - mu)^T Sigma^-1 (e - mu)); accepts a single vector or a stack."""
    e = np.asarray(e, dtype=np.float64)
    d = e - mu
    if not np.all(np.isfinite(d)):
        raise DetectorError("non-finite error vector")
    if d.ndim == 1:
        q = float(d @ cov_inv @ d)
        return np.sqrt(max(q, 0.0))
    q = np.einsum("ij,jk,ik->i", d, cov_inv, d)
    return np.sqrt(np.maximum(q, 0.0))


def select_threshold(distances, extreme_rate, method="quantile", scale=1.0):
    """Pick the decision threshold from training-set distances.

    quantile: empirical (1 - extreme_rate) quantile, lower interpolation.
    scaled-mean: scale * mean(distances).
    """
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        raise DetectorError("empty distance set")
    if method == "quantile":
        if not 0.0 < extreme_rate < 1.0:
            raise DetectorError("extreme_rate must be in (0, 1)")
        return float(np.quantile(distances, 1.0 - extreme_rate, method="lower"))
    if method == "scaled-mean":
        return float(scale * distances.mean())
    raise DetectorError(f"unknown threshold method {method!r}")


def fit_detector(model, series, extreme_rate, method="quantile", scale=1.0):
    """Full fit: errors -> statistics -> distances -> threshold."""
    errors, _ = reconstruction_errors(model, series)
    mu, cov = fit_statistics(errors)
    cov_inv = np.linalg.inv(cov)
    distances = mahalanobis(errors, mu, cov_inv)
    eps = select_threshold(distances, extreme_rate, method, scale)
    return DetectionArtifacts(mu, cov, cov_inv, eps, method, extreme_rate)


def predict(model, artifacts: DetectionArtifacts, series: FrameSeries):
    """Per-nowcast-frame labels: 1 iff distance strictly exceeds the
    threshold (a tie scores 0). Returns (labels, distances, frame_indices)."""
    errors, frame_indices = reconstruction_errors(model, series)
    distances = mahalanobis(errors, artifacts.mean, artifacts.cov_inv)
    labels = (distances > artifacts.threshold).astype(int)
    return labels, distances, frame_indices


# -- artifact container ---------------------------------------------------


def save_artifacts(artifacts: DetectionArtifacts, path):
    buf = io.BytesIO()
    buf.write(ARTIFACTS_MAGIC)
    buf.write(struct.pack("<I", ARTIFACTS_VERSION))
    method = artifacts.method.encode()
    buf.write(struct.pack("<I", len(method)))
    buf.write(method)
    buf.write(struct.pack("<I", artifacts.mean.shape[0]))
    buf.write(struct.pack("<dd", artifacts.threshold, artifacts.extreme_rate))
    buf.write(np.ascontiguousarray(artifacts.mean, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(artifacts.cov, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(artifacts.cov_inv, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_artifacts(path) -> DetectionArtifacts:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != ARTIFACTS_MAGIC:
        raise DetectorError(f"{path}: not a detection artifacts file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != ARTIFACTS_VERSION:
        raise DetectorError(f"{path}: unsupported version {version}")
    (mlen,) = struct.unpack("<I", buf.read(4))
    method = buf.read(mlen).decode()
    (dim,) = struct.unpack("<I", buf.read(4))
    threshold, rate = struct.unpack("<dd", buf.read(16))
    mean = np.frombuffer(buf.read(8 * dim), dtype="<f8").copy()
    cov = np.frombuffer(buf.read(8 * dim * dim), dtype="<f8").reshape(dim, dim).copy()
    cov_inv = np.frombuffer(buf.read(8 * dim * dim), dtype="<f8").reshape(dim, dim).copy()
    return DetectionArtifacts(mean, cov, cov_inv, threshold, method, rate)
