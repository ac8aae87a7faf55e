"""Command-line surface: ingest, synth, train, detect, eval, export-latent.

Run configuration is a flat key=value text file; flags override file
values, and the merged effective config is written next to every output so
a run can be reproduced exactly. Exit codes: 0 success, 2 validation
error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import data as D
from . import detector as DT
from . import metrics as M
from . import models as MD
from . import training as TR

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

ENV_OUT_DIR = "STNOWCAST_OUT"

# RunConfig = every ModelConfig field plus pipeline-level settings.
PIPELINE_DEFAULTS = {
    "split_fraction": 0.8,
    "threshold_method": "quantile",
    "extreme_rate": None,      # default: training-split label rate
    "threshold_scale": 1.0,    # scaled-mean multiplier
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _parse_kv_file(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value", EXIT_VALIDATION)
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _coerce(key, raw, template):
    if raw is None or raw == "":
        return None
    if isinstance(template, bool):
        return raw in ("1", "true", "yes")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def load_run_config(path=None, overrides=()):
    """Merge defaults <- config file <- --set overrides."""
    cfg = asdict(MD.ModelConfig())
    cfg.update(PIPELINE_DEFAULTS)
    raw = {}
    if path:
        raw.update(_parse_kv_file(path))
    for item in overrides:
        if "=" not in item:
            raise CliError(f"--set needs key=value, got {item!r}", EXIT_VALIDATION)
        key, _, val = item.partition("=")
        raw[key.strip()] = val.strip()
    for key, val in raw.items():
        if key not in cfg:
            raise CliError(f"unknown config key {key!r}", EXIT_VALIDATION)
        template = cfg[key] if cfg[key] is not None else 0.0
        try:
            cfg[key] = _coerce(key, val, template)
        except ValueError:
            raise CliError(f"bad value for {key!r}: {val!r}", EXIT_VALIDATION)
    return cfg


def model_config_from(cfg):
    kwargs = {f.name: cfg[f.name] for f in fields(MD.ModelConfig)}
    try:
        return MD.ModelConfig(**kwargs).validate()
    except MD.ConfigError as e:
        raise CliError(str(e), EXIT_VALIDATION)


def write_effective_config(cfg, out_path):
    lines = [f"{k}={'' if v is None else v}" for k, v in sorted(cfg.items())]
    Path(str(out_path) + ".config").write_text("\n".join(lines) + "\n")


def _atomic(path, write_fn):
    """Write to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_path(arg):
    path = Path(arg)
    if not path.is_absolute():
        base = os.environ.get(ENV_OUT_DIR)
        if base:
            path = Path(base) / path
    return path


# -- subcommands ----------------------------------------------------------


def cmd_synth(args):
    try:
        series = D.synthesize(args.preset, args.frames, args.seed, rate=args.rate)
    except D.DataError as e:
        raise CliError(str(e), EXIT_VALIDATION)
    out = _out_path(args.out)
    _atomic(out, lambda tmp: D.save_series(series, tmp))
    print(f"wrote {series.n_frames} frames, {series.graph.n} nodes, "
          f"{series.n_features} features, "
          f"{int(series.labels.sum())} extreme -> {out}")
    return EXIT_OK


def _ingest_spec_from_file(path):
    raw = _parse_kv_file(path)
    try:
        return D.IngestSpec(
            bin_seconds=int(raw["bin_seconds"]),
            feature_columns=[c.strip() for c in raw["features"].split(",")],
            aggregations=[a.strip() for a in raw["aggregations"].split(",")],
            extreme_feature=raw["extreme_feature"],
            extreme_comparator=raw["extreme_comparator"],
            extreme_threshold=float(raw["extreme_threshold"]),
            location=raw.get("location", "lonlat"),
        )
    except KeyError as e:
        raise CliError(f"{path}: missing ingest key {e}", EXIT_VALIDATION)
    except (ValueError, D.DataError) as e:
        raise CliError(f"{path}: {e}", EXIT_VALIDATION)


def cmd_ingest(args):
    spec = _ingest_spec_from_file(args.spec)
    if args.grid:
        try:
            parts = [float(x) for x in args.grid.split(",")]
            lon_min, lon_max, lat_min, lat_max, rows, cols = parts
            g = D.build_grid_graph(lon_min, lon_max, lat_min, lat_max,
                                   int(rows), int(cols))
        except (ValueError, D.DataError) as e:
            raise CliError(f"bad --grid: {e}", EXIT_VALIDATION)
    else:
        try:
            edges = []
            for line in Path(args.graph).read_text().splitlines():
                line = line.strip()
                if line:
                    a, _, b = line.partition(",")
                    edges.append((a.strip(), b.strip()))
            g = D.build_area_graph(edges)
        except (D.DataError, D.GraphError, OSError) as e:
            raise CliError(f"bad --graph: {e}", EXIT_DATA)
        spec.location = "area"
    try:
        series, skipped = D.ingest_csv(args.events, spec, g)
    except (D.DataError, OSError) as e:
        raise CliError(str(e), EXIT_DATA)
    out = _out_path(args.out)
    _atomic(out, lambda tmp: D.save_series(series, tmp))
    print(f"ingested {series.n_frames} frames "
          f"(skipped: {skipped['unparseable']} unparseable, "
          f"{skipped['outside_graph']} outside graph) -> {out}")
    return EXIT_OK


def _load_series(path):
    try:
        return D.load_series(path)
    except (D.DataError, OSError) as e:
        raise CliError(str(e), EXIT_DATA)


def cmd_train(args):
    cfg = load_run_config(args.config, args.set or ())
    series = _load_series(args.data)
    cfg["n_nodes"] = series.graph.n
    cfg["features"] = series.n_features
    mc = model_config_from(cfg)
    try:
        train_split, _, _ = D.split(series, cfg["split_fraction"])
    except D.DataError as e:
        raise CliError(str(e), EXIT_DATA)
    model = MD.build_model(mc, series.graph)
    try:
        report = TR.train(model, train_split,
                          progress=_progress if args.verbose else None)
    except TR.TrainingError as e:
        raise CliError(str(e), EXIT_DIVERGENCE)
    except D.DataError as e:
        raise CliError(str(e), EXIT_DATA)
    out = _out_path(args.model_out)
    _atomic(out, lambda tmp: MD.save_checkpoint(model, tmp))
    _atomic(str(out) + ".report.txt", lambda tmp: report.save(tmp))
    write_effective_config(cfg, out)
    final = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    print(f"trained {mc.kind} for {mc.epochs} epochs, final loss {final:.6g}, "
          f"checksum {report.parameter_checksum[:12]} -> {out}")
    return EXIT_OK


def _progress(epoch, loss, lr):
    print(f"epoch {epoch}: loss {loss:.6g} lr {lr:.3g}", file=sys.stderr)


def cmd_detect(args):
    cfg = load_run_config(args.config, args.set or ())
    if args.threshold_method:
        cfg["threshold_method"] = args.threshold_method
    if cfg["threshold_method"] not in DT.THRESHOLD_METHODS:
        raise CliError(f"unknown threshold method {cfg['threshold_method']!r}",
                       EXIT_VALIDATION)
    series = _load_series(args.data)
    try:
        model = MD.load_checkpoint(args.model, series.graph)
    except (ValueError, OSError, MD.ConfigError) as e:
        raise CliError(str(e), EXIT_DATA)
    try:
        train_split, test_split, _ = D.split(series, cfg["split_fraction"])
    except D.DataError as e:
        raise CliError(str(e), EXIT_DATA)
    rate = cfg["extreme_rate"]
    if rate is None:
        rate = float(train_split.labels.mean())
    if not 0.0 < rate < 1.0:
        raise CliError(f"extreme rate {rate} not in (0, 1); set extreme_rate",
                       EXIT_VALIDATION)
    try:
        artifacts = DT.fit_detector(model, train_split, rate,
                                    cfg["threshold_method"], cfg["threshold_scale"])
        pred, _, frame_idx = DT.predict(model, artifacts, test_split)
    except (DT.DetectorError, D.DataError) as e:
        raise CliError(str(e), EXIT_DATA)
    true = test_split.labels[frame_idx]
    counts = M.confusion(pred, true)
    dataset = Path(args.data).stem
    out = _out_path(args.report)
    _atomic(out, lambda tmp: M.write_report(
        [(dataset, model.config.kind, counts)], tmp))
    _atomic(str(out) + ".artifacts", lambda tmp: DT.save_artifacts(artifacts, tmp))
    write_effective_config(cfg, out)
    s = M.scores(counts)
    print(f"{model.config.kind} on {dataset}: threshold {artifacts.threshold:.4f} "
          f"tn={counts.tn} fp={counts.fp} fn={counts.fn} tp={counts.tp} "
          f"f1={s['f1']:.4f} f2={s['f2']:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args):
    out = _out_path(args.out)
    try:
        rows = None
        _atomic(out, lambda tmp: M.merge_reports(args.reports, tmp))
        rows = M.read_report(out)
    except (ValueError, OSError) as e:
        raise CliError(str(e), EXIT_DATA)
    print(f"merged {len(rows)} rows -> {out}")
    return EXIT_OK


def cmd_export_latent(args):
    series = _load_series(args.data)
    try:
        model = MD.load_checkpoint(args.model, series.graph)
    except (ValueError, OSError, MD.ConfigError) as e:
        raise CliError(str(e), EXIT_DATA)
    if not hasattr(model, "encode_memory"):
        raise CliError(f"model kind {model.config.kind!r} has no transformer "
                       f"memory to export", EXIT_VALIDATION)
    cfg = load_run_config(args.config, args.set or ())
    try:
        _, test_split, _ = D.split(series, cfg["split_fraction"])
        use = test_split if args.split == "test" else series
        out = _out_path(args.out)
        _atomic(out, lambda tmp: M.export_latent(model, use, tmp))
    except (D.DataError, ValueError) as e:
        raise CliError(str(e), EXIT_DATA)
    print(f"exported latent vectors -> {out}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stnowcast",
        description="Spatiotemporal nowcasting and extreme-event detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="bucket event CSV into a dataset container")
    p.add_argument("--events", required=True, help="input CSV of events")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid", help="lon_min,lon_max,lat_min,lat_max,rows,cols")
    group.add_argument("--graph", help="edge-list file, one 'idA,idB' per line")
    p.add_argument("--spec", required=True, help="ingest spec key=value file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--preset", required=True, choices=sorted(D.PRESETS))
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--rate", type=float, default=None,
                   help="extreme-event rate override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a forecaster")
    p.add_argument("--config", help="run config key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value")
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--model-out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("detect", help="fit threshold on train, score test")
    p.add_argument("--config", help="run config key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True)
    p.add_argument("--threshold-method", choices=DT.THRESHOLD_METHODS)
    p.add_argument("--report", required=True, help="output report row file")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("eval", help="merge per-run reports into one table")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-latent", help="export transformer memory vectors")
    p.add_argument("--config", help="run config key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "test"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_latent)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
