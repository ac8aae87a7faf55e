"""Confusion counts, the four evaluation scores, report tables, latent export.

The F1/F2 forms are kept exactly as used by the reference results this
package reproduces: F1 = tp / (tp + (fp + fn)/2), F2 = tp / (tp + 0.2*fp
+ 0.8*fn). Scores round half-even to 4 decimals in report files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

REPORT_COLUMNS = ["dataset", "model", "tn", "fp", "fn", "tp",
                  "tpr", "acc", "f1", "f2"]


@dataclass(frozen=True)
class ConfusionCounts:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        for v in (self.tn, self.fp, self.fn, self.tp):
            if v < 0:
                raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tn + self.fp + self.fn + self.tp


def confusion(pred, true) -> ConfusionCounts:
    """Standard binary counts; positive class is 1 (extreme)."""
    pred = np.asarray(pred).astype(bool)
    true = np.asarray(true).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    return ConfusionCounts(
        tn=int((~pred & ~true).sum()),
        fp=int((pred & ~true).sum()),
        fn=int((~pred & true).sum()),
        tp=int((pred & true).sum()),
    )


def scores(c: ConfusionCounts):
    """tpr, acc, f1, f2 plus a `degenerate` flag for zero denominators."""
    out = {}
    degenerate = False

    def ratio(num, den):
        nonlocal degenerate
        if den == 0:
            degenerate = True
            return 0.0
        return num / den

    out["tpr"] = ratio(c.tp, c.tp + c.fn)
    out["acc"] = ratio(c.tp + c.tn, c.total)
    out["f1"] = ratio(c.tp, c.tp + 0.5 * (c.fp + c.fn))
    out["f2"] = ratio(c.tp, c.tp + 0.2 * c.fp + 0.8 * c.fn)
    out["degenerate"] = degenerate
    return out


def _round4(x):
    # round-half-even, printed with fixed 4 decimals
    return f"{round(x, 4):.4f}"


def report_rows(rows):
    """rows: iterable of (dataset, model, ConfusionCounts) -> list of dicts."""
    out = []
    for dataset, model, c in rows:
        s = scores(c)
        out.append({
            "dataset": dataset, "model": model,
            "tn": c.tn, "fp": c.fp, "fn": c.fn, "tp": c.tp,
            "tpr": _round4(s["tpr"]), "acc": _round4(s["acc"]),
            "f1": _round4(s["f1"]), "f2": _round4(s["f2"]),
        })
    return out


def write_report(rows, path):
    """Comma-delimited UTF-8 table with a fixed header row."""
    rows = report_rows(rows)
    if not rows:
        raise ValueError("empty report")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def read_report(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def merge_reports(paths, out_path):
    """Concatenate per-run report rows into one comparison table,
    preserving input order."""
    rows = []
    for p in paths:
        rows.extend(read_report(p))
    if not rows:
        raise ValueError("no report rows to merge")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def export_latent(model, series, path, batch_size=64):
    """One row per window: time-averaged transformer memory plus the
    nowcast frame's extreme label. Comma-delimited floats."""
    from .training import make_windows, window_arrays

    pairs = make_windows(series, model.config.window)
    src, _ = window_arrays(pairs)
    rows = []
    for lo in range(0, len(pairs), batch_size):
        mem = model.encode_memory(src[lo:lo + batch_size])
        flat = mem.mean(axis=1).reshape(mem.shape[0], -1)
        rows.append(flat)
    latent = np.concatenate(rows)
    labels = np.array([int(series.labels[p.end_index]) for p in pairs])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{i}" for i in range(latent.shape[1])] + ["label"])
        for vec, lab in zip(latent, labels):
            writer.writerow([repr(float(v)) for v in vec] + [lab])
    return latent, labels
