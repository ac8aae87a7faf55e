"""Datasets: event ingestion, graph construction, normalization, synthesis.

A FrameSeries is the one dataset currency: a graph, a time-ordered stack of
node-feature frames on a uniform time grid, and a per-frame extreme label.
Values are stored raw; `split` computes 0-1 normalization statistics on the
training side and applies them to both sides.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .graph import GraphError, GraphSpec

CONTAINER_MAGIC = b"STND"
CONTAINER_VERSION = 1


class DataError(ValueError):
    pass


@dataclass
class FrameSeries:
    graph: GraphSpec
    frames: np.ndarray          # (frames, N, C) float32
    timestamps: np.ndarray      # (frames,) int64, strictly increasing, uniform
    labels: np.ndarray          # (frames,) bool
    feature_names: list[str]
    normalization: np.ndarray | None = None  # (C, 2) float32 [min, max], set by split

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=bool)
        n_frames = len(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[1] != self.graph.n:
            raise DataError(f"frames shape {self.frames.shape} incompatible with "
                            f"{self.graph.n}-node graph")
        if len(self.timestamps) != n_frames or len(self.labels) != n_frames:
            raise DataError("frames, timestamps, and labels must have equal length")
        if len(self.feature_names) != self.frames.shape[2]:
            raise DataError("feature_names length must equal feature count")
        if n_frames > 1:
            deltas = np.diff(self.timestamps)
            if (deltas <= 0).any():
                raise DataError("timestamps must be strictly increasing")
            if len(set(deltas.tolist())) > 1:
                raise DataError("timestamps must be uniformly spaced")
        if self.normalization is not None:
            self.normalization = np.asarray(self.normalization, dtype=np.float32)
            if self.normalization.shape != (self.frames.shape[2], 2):
                raise DataError("normalization must be (C, 2) min/max pairs")

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def n_features(self):
        return self.frames.shape[2]


# -- graph construction ---------------------------------------------------


def build_grid_graph(lon_min, lon_max, lat_min, lat_max, rows, cols) -> GraphSpec:
    """Mesh grid over a bounding box; 4-neighborhood edges of weight 1.

    Node (r, c) covers one cell; node_ids are "r:c". The bounds fix the
    cell geometry used by event bucketing.
    """
    if rows < 1 or cols < 1:
        raise DataError("rows and cols must be >= 1")
    if lon_max <= lon_min or lat_max <= lat_min:
        raise DataError("degenerate bounding box")
    n = rows * cols
    adj = np.zeros((n, n))
    node_ids = [f"{r}:{c}" for r in range(rows) for c in range(cols)]

    def idx(r, c):
        return r * cols + c

    for r in range(rows):
        for c in range(cols):
            if r + 1 < rows:
                adj[idx(r, c), idx(r + 1, c)] = adj[idx(r + 1, c), idx(r, c)] = 1.0
            if c + 1 < cols:
                adj[idx(r, c), idx(r, c + 1)] = adj[idx(r, c + 1), idx(r, c)] = 1.0
    g = GraphSpec(n, adj, node_ids)
    g.grid = (lon_min, lon_max, lat_min, lat_max, rows, cols)  # used by ingestion
    return g


def build_area_graph(edge_list, node_ids=None) -> GraphSpec:
    """Unweighted symmetric adjacency over named areas.

    Duplicate edges collapse; self-edges are rejected. `node_ids` may add
    isolated areas (they fail later at operator time, not here).
    """
    ids = list(node_ids) if node_ids else []
    seen = set(ids)
    for a, b in edge_list:
        for v in (a, b):
            if v not in seen:
                seen.add(v)
                ids.append(v)
    index = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    if n == 0:
        raise DataError("empty area graph")
    adj = np.zeros((n, n))
    for a, b in edge_list:
        if a == b:
            raise DataError(f"self-edge on area {a!r}")
        adj[index[a], index[b]] = adj[index[b], index[a]] = 1.0
    return GraphSpec(n, adj, ids)


# -- ingestion ------------------------------------------------------------

AGGREGATIONS = ("sum", "max", "count")
COMPARATORS = {">=": np.greater_equal, ">": np.greater,
               "<=": np.less_equal, "<": np.less}


@dataclass
class IngestSpec:
    bin_seconds: int
    feature_columns: list[str]
    aggregations: list[str]
    extreme_feature: str
    extreme_comparator: str
    extreme_threshold: float
    location: str = "lonlat"  # "lonlat" (grid graphs) or "area" (area graphs)

    def __post_init__(self):
        if self.bin_seconds <= 0:
            raise DataError("bin width must be positive")
        if not self.feature_columns:
            raise DataError("at least one feature column required")
        if len(self.aggregations) != len(self.feature_columns):
            raise DataError("one aggregation per feature column required")
        for a in self.aggregations:
            if a not in AGGREGATIONS:
                raise DataError(f"unknown aggregation {a!r}")
        if self.extreme_comparator not in COMPARATORS:
            raise DataError(f"unknown comparator {self.extreme_comparator!r}")
        if self.extreme_feature not in self.feature_columns:
            raise DataError("extreme rule must reference a feature column")


def _parse_timestamp(raw):
    raw = raw.strip()
    try:
        return int(float(raw))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise DataError(f"unparseable timestamp {raw!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _grid_node(g, lon, lat):
    lon_min, lon_max, lat_min, lat_max, rows, cols = g.grid
    if not (lon_min <= lon <= lon_max and lat_min <= lat <= lat_max):
        return None
    r = min(int((lat - lat_min) / (lat_max - lat_min) * rows), rows - 1)
    c = min(int((lon - lon_min) / (lon_max - lon_min) * cols), cols - 1)
    return r * cols + c


def ingest_events(rows, spec: IngestSpec, g: GraphSpec):
    """Bucket event rows into (time bin, node) cells.

    `rows` is an iterable of dicts (e.g. csv.DictReader). Returns the raw
    FrameSeries plus a dict of skip counts. Labels come from the extreme
    rule applied to raw (pre-normalization) per-frame feature maxima.
    """
    index = {v: i for i, v in enumerate(g.node_ids)}
    events = []  # (bin, node, feature values)
    skipped = {"unparseable": 0, "outside_graph": 0}
    for row in rows:
        try:
            ts = _parse_timestamp(row["timestamp"])
            values = [float(row[c]) for c in spec.feature_columns]
            if spec.location == "lonlat":
                lon, lat = float(row["longitude"]), float(row["latitude"])
                node = _grid_node(g, lon, lat)
            else:
                node = index.get(row["area_id"].strip())
        except (KeyError, ValueError, DataError):
            skipped["unparseable"] += 1
            continue
        if node is None:
            skipped["outside_graph"] += 1
            continue
        events.append((ts // spec.bin_seconds, node, values))
    if not events:
        raise DataError("no ingestible events")

    bins = sorted({e[0] for e in events})
    lo, hi = bins[0], bins[-1]
    n_frames = hi - lo + 1
    c = len(spec.feature_columns)
    frames = np.zeros((n_frames, g.n, c), dtype=np.float64)
    counts = np.zeros((n_frames, g.n, c), dtype=np.int64)
    # order-independent merge: sum/count accumulate, max folds commutatively
    for b, node, values in sorted(events):
        t = b - lo
        for j, (agg, v) in enumerate(zip(spec.aggregations, values)):
            if agg == "sum":
                frames[t, node, j] += v
            elif agg == "count":
                frames[t, node, j] += 1.0
            else:
                if counts[t, node, j] == 0:
                    frames[t, node, j] = v
                else:
                    frames[t, node, j] = max(frames[t, node, j], v)
            counts[t, node, j] += 1

    fi = spec.feature_columns.index(spec.extreme_feature)
    cmp = COMPARATORS[spec.extreme_comparator]
    labels = cmp(frames[:, :, fi], spec.extreme_threshold).any(axis=1)
    timestamps = (np.arange(lo, hi + 1, dtype=np.int64)) * spec.bin_seconds
    series = FrameSeries(g, frames.astype(np.float32), timestamps, labels,
                         list(spec.feature_columns))
    return series, skipped


def ingest_csv(path, spec: IngestSpec, g: GraphSpec):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        return ingest_events(reader, spec, g)


# -- synthetic generator --------------------------------------------------

PRESETS = {
    # mirrors the 16-node grid dataset shape: 4x4 mesh, 3 features
    "grid16": {"kind": "grid", "rows": 4, "cols": 4, "features": 3, "rate": 0.05},
    # mirrors the 45-area dataset shape: 45 nodes, 6 features, sparse extremes
    "area45": {"kind": "area", "nodes": 45, "features": 6, "rate": 0.0186},
}


def _area45_graph(n, rng):
    """Connected ring plus random chords; fixed by the generator seed."""
    edges = [(f"a{i}", f"a{(i + 1) % n}") for i in range(n)]
    extra = rng.integers(0, n, size=(2 * n, 2))
    for a, b in extra:
        if a != b:
            edges.append((f"a{a}", f"a{b}"))
    return build_area_graph(edges)


def synthesize(preset, n_frames, seed, rate=None) -> FrameSeries:
    """Deterministic synthetic series: smooth spatially-mixed autoregressive
    background plus injected spike frames labeled extreme."""
    if preset not in PRESETS:
        raise DataError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    if n_frames < 2:
        raise DataError("need at least 2 frames")
    p = PRESETS[preset]
    rng = np.random.default_rng(seed)
    if p["kind"] == "grid":
        g = build_grid_graph(-120.0, -116.0, 32.0, 36.0, p["rows"], p["cols"])
    else:
        g = _area45_graph(p["nodes"], rng)
    n, c = g.n, p["features"]
    rate = p["rate"] if rate is None else float(rate)
    if not 0.0 <= rate < 1.0:
        raise DataError("rate must be in [0, 1)")

    # neighborhood mixing keeps the background spatially correlated
    a_tilde = g.adjacency + np.eye(n)
    mix = a_tilde / a_tilde.sum(axis=1, keepdims=True)
    phi = 0.995
    node_mean = rng.uniform(2.0, 4.0, size=(n, c))
    season_amp = rng.uniform(0.5, 1.0, size=(n, c))
    season_phase = rng.uniform(0, 2 * np.pi, size=(n, c))
    period = 48.0
    noise_scale = 0.05

    frames = np.zeros((n_frames, n, c))
    labels = np.zeros(n_frames, dtype=bool)
    n_spikes = int(round(rate * n_frames))
    if n_spikes:
        labels[rng.choice(n_frames, size=n_spikes, replace=False)] = True
    state = rng.normal(0, 0.3, size=(n, c))
    for t in range(n_frames):
        state = phi * (mix @ state) + rng.normal(0, noise_scale, size=(n, c))
        season = season_amp * np.sin(2 * np.pi * t / period + season_phase)
        frame = node_mean + season + state
        if labels[t]:
            # spike is an additive transient: it does not enter the AR state
            hot = rng.integers(0, n)
            neighbors = np.flatnonzero(a_tilde[hot] > 0)
            amp = rng.uniform(6.0, 10.0)
            frame[neighbors] += amp
            frame[hot] += amp
        frames[t] = frame

    timestamps = np.arange(n_frames, dtype=np.int64) * 3600
    names = [f"f{j}" for j in range(c)]
    return FrameSeries(g, frames.astype(np.float32), timestamps, labels, names)


# -- split and normalization ----------------------------------------------


def normalize(series: FrameSeries, stats):
    """Apply per-feature 0-1 scaling; out-of-range values clamp to [0, 1].

    Returns the scaled series and the number of clamped values.
    """
    stats = np.asarray(stats, dtype=np.float32)
    lo, hi = stats[:, 0], stats[:, 1]
    span = np.where(hi > lo, hi - lo, 1.0).astype(np.float32)
    scaled = (series.frames - lo) / span
    clamped = int((scaled < 0).sum() + (scaled > 1).sum())
    scaled = np.clip(scaled, 0.0, 1.0).astype(np.float32)
    return replace(series, frames=scaled, normalization=stats), clamped


def split(series: FrameSeries, train_fraction):
    """Chronological split; normalization fitted on train, applied to both.

    No shuffling: the sequence order is the whole point. Returns
    (train, test, clamped_test_count).
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must be in (0, 1)")
    cut = int(series.n_frames * train_fraction)
    if cut < 1 or cut >= series.n_frames:
        raise DataError(f"split at {cut} leaves an empty side")
    train_frames = series.frames[:cut]
    stats = np.stack([train_frames.reshape(-1, series.n_features).min(axis=0),
                      train_frames.reshape(-1, series.n_features).max(axis=0)],
                     axis=1)
    train = replace(series, frames=series.frames[:cut],
                    timestamps=series.timestamps[:cut], labels=series.labels[:cut])
    test = replace(series, frames=series.frames[cut:],
                   timestamps=series.timestamps[cut:], labels=series.labels[cut:])
    train, _ = normalize(train, stats)
    test, clamped = normalize(test, stats)
    return train, test, clamped


# -- dataset container ----------------------------------------------------


def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_str(buf):
    (n,) = struct.unpack("<I", buf.read(4))
    return buf.read(n).decode("utf-8")


def save_series(series: FrameSeries, path):
    """Versioned binary container; round-trips bit-exactly."""
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<I", CONTAINER_VERSION))
    buf.write(struct.pack("<III", series.graph.n, series.n_features, series.n_frames))
    buf.write(struct.pack("<B", 1 if series.normalization is not None else 0))
    for name in series.feature_names:
        _write_str(buf, name)
    for nid in series.graph.node_ids:
        _write_str(buf, nid)
    if series.normalization is not None:
        buf.write(np.ascontiguousarray(series.normalization, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(series.graph.adjacency, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(series.frames, dtype="<f4").tobytes())
    buf.write(series.labels.astype(np.uint8).tobytes())
    buf.write(np.ascontiguousarray(series.timestamps, dtype="<i8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_series(path) -> FrameSeries:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != CONTAINER_MAGIC:
        raise DataError(f"{path}: not a dataset container")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    n, c, n_frames = struct.unpack("<III", buf.read(12))
    (has_norm,) = struct.unpack("<B", buf.read(1))
    feature_names = [_read_str(buf) for _ in range(c)]
    node_ids = [_read_str(buf) for _ in range(n)]
    norm = None
    if has_norm:
        norm = np.frombuffer(buf.read(8 * c), dtype="<f4").reshape(c, 2).copy()
    adj = np.frombuffer(buf.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    frames = np.frombuffer(buf.read(4 * n_frames * n * c),
                           dtype="<f4").reshape(n_frames, n, c).copy()
    labels = np.frombuffer(buf.read(n_frames), dtype=np.uint8).astype(bool)
    timestamps = np.frombuffer(buf.read(8 * n_frames), dtype="<i8").copy()
    g = GraphSpec(n, adj, node_ids)
    return FrameSeries(g, frames, timestamps, labels, feature_names, norm)
