"""Command-line entry point: ``fi2vts <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors, 2 on configuration or data errors.
See README.md for the config JSON layout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from . import bench, data, network, training
from .errors import ConfigError, DataError, UsageError

log = logging.getLogger("fi2vts")

CONFIG_SECTIONS = {"model", "data", "split", "kkr", "bench"}
CHECKPOINT = "checkpoint.bin"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; usage errors here are exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def run_config(doc: dict, seed: int | None, n_vars: int | None = None) -> network.RunConfig:
    """RunConfig from ``model``; ``D`` defaults to the data's variable count."""
    model = dict(doc.get("model", {}))
    if n_vars is not None:
        model.setdefault("D", n_vars)
    if seed is not None:
        model["seed"] = seed
    return network.RunConfig.from_dict(model)


def load_series(doc: dict) -> data.SeriesSet:
    """CSV file when ``data.csv`` is set, otherwise the synthetic generator."""
    d = dict(doc.get("data", {}))
    unknown = set(d) - {"csv", "synthetic", "total_length", "seed"}
    if unknown:
        raise ConfigError(f"unknown data fields {sorted(unknown)}")
    if "csv" in d:
        return data.load_csv(d["csv"])
    spec = synth_spec(d)
    return data.generate(spec, int(d.get("total_length", 4000)), seed=int(d.get("seed", 0)))


def synth_spec(d: dict) -> data.SynthSpec:
    synth = d.get("synthetic")
    if synth is None:
        return data.default_benchmark_spec()
    if not isinstance(synth, dict):
        raise ConfigError("data.synthetic must be an object of SynthSpec fields")
    return data.SynthSpec.from_dict(synth)


def make_splits(doc: dict, cfg: network.RunConfig, series: data.SeriesSet) -> data.Splits:
    if series.D != cfg.D:
        raise ConfigError(f"data has {series.D} variables but model.D={cfg.D}")
    sp = doc.get("split", {})
    unknown = set(sp) - {"ratios", "stride"}
    if unknown:
        raise ConfigError(f"unknown split fields {sorted(unknown)}")
    return data.window_pairs(series, cfg.L, cfg.T, stride=int(sp.get("stride", 1)),
                             ratios=tuple(sp.get("ratios", data.DEFAULT_RATIOS)))


def write_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def metrics_doc(report: training.EvalReport, split: str, seed: int, record_runtime: bool) -> dict:
    d = report.to_dict(split=split, seed=seed)
    if not record_runtime:
        d["runtime_s"] = None  # keeps the file byte-identical across reruns
    return d


def write_history(history: list[dict], path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_mse"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_mse"])])
    return path


# ---------------------------------------------------------------- subcommands

def cmd_generate(args, doc) -> int:
    d = dict(doc.get("data", {}))
    spec = synth_spec(d)
    seed = args.seed if args.seed is not None else int(d.get("seed", 0))
    series = data.generate(spec, int(d.get("total_length", 4000)), seed=seed)
    path = data.save_csv(series, args.out / "series.csv")
    print(f"wrote {path} ({series.D} variables, {series.total_length} ticks)")
    return 0


def _train_one(cfg, splits, names, out: Path, args) -> training.EvalReport:
    out.mkdir(parents=True, exist_ok=True)
    params, history = training.train(cfg, splits)
    report = training.evaluate(params, cfg, splits.test, names, workers=args.parallel_eval)
    network.save_checkpoint(params, out / CHECKPOINT)
    write_history(history, out / "history.csv")
    write_json(cfg.to_dict(), out / "config.json")
    write_json(metrics_doc(report, "test", cfg.seed, args.record_runtime), out / "metrics.json")
    print(f"seed {cfg.seed}: test mse {report.mse:.6f} mae {report.mae:.6f} "
          f"({len(history)} epochs) -> {out}")
    return report


def cmd_train(args, doc) -> int:
    series = load_series(doc)
    cfg = run_config(doc, args.seed, series.D)
    splits = make_splits(doc, cfg, series)
    if args.repeats == 1:
        _train_one(cfg, splits, series.variable_names, args.out, args)
        return 0
    reports = []
    for i in range(args.repeats):
        c = network.RunConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed + i})
        reports.append(_train_one(c, splits, series.variable_names,
                                  args.out / f"seed_{c.seed}", args))
    summary = {}
    for key in ("mse", "mae"):
        vals = [getattr(r, key) for r in reports]
        summary[key] = {"mean": statistics.fmean(vals), "std": statistics.pstdev(vals),
                        "median": statistics.median(vals), "values": vals}
    summary["seeds"] = [cfg.seed + i for i in range(args.repeats)]
    write_json(summary, args.out / "summary.json")
    print(f"mse {summary['mse']['mean']:.6f} +- {summary['mse']['std']:.6f}, "
          f"mae {summary['mae']['mean']:.6f} +- {summary['mae']['std']:.6f}")
    return 0


def _checkpoint_path(args) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else args.out / CHECKPOINT
    if not path.exists():
        raise DataError(f"checkpoint not found: {path} (run `train` first or pass --checkpoint)")
    return path


def cmd_evaluate(args, doc) -> int:
    params = network.load_checkpoint(_checkpoint_path(args))
    series = load_series(doc)
    cfg = run_config(doc, args.seed, series.D)
    splits = make_splits(doc, cfg, series)
    report = training.evaluate(params, cfg, splits[args.split], series.variable_names,
                               workers=args.parallel_eval)
    path = write_json(metrics_doc(report, args.split, cfg.seed, args.record_runtime),
                      args.out / f"eval_{args.split}.json")
    print(f"{args.split}: mse {report.mse:.6f} mae {report.mae:.6f} -> {path}")
    return 0


def cmd_forecast(args, doc) -> int:
    params = network.load_checkpoint(_checkpoint_path(args))
    series = data.load_csv(args.input) if args.input else load_series(doc)
    cfg = run_config(doc, args.seed, series.D)
    if series.D != cfg.D:
        raise DataError(f"input has {series.D} variables but model.D={cfg.D}")
    if series.total_length < cfg.L:
        raise DataError(f"input has {series.total_length} ticks, fewer than L={cfg.L}")
    lookback = series.values[:, -cfg.L:]
    pred = network.predict(lookback, params, cfg)  # [D, T]
    path = args.out / "forecast.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series.variable_names)
        for row in pred.T:
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {path} ({cfg.T} steps x {cfg.D} variables)")
    return 0


def cmd_verify_kkr(args, doc) -> int:
    k = doc.get("kkr", {})
    unknown = set(k) - {"families", "paddings", "n"}
    if unknown:
        raise ConfigError(f"unknown kkr fields {sorted(unknown)}")
    rows = bench.verify_kkr(k.get("families", bench.DEFAULT_FAMILIES),
                            k.get("paddings", bench.DEFAULT_PADDINGS),
                            n=int(k.get("n", 64)), path=args.out / "kkr.csv")
    for r in rows:
        print(f"{r['family']:<24} padding {r['padding']:>2}  re {r['residual_re']:.4e}  "
              f"im {r['residual_im']:.4e}")
    return 0


def cmd_bench_scaling(args, doc) -> int:
    cfg = run_config(doc, args.seed)
    b = doc.get("bench", {})
    unknown = set(b) - {"lengths", "batch", "with_tape"}
    if unknown:
        raise ConfigError(f"unknown bench fields {sorted(unknown)}")
    rep = bench.bench_scaling(cfg, b.get("lengths", bench.DEFAULT_LENGTHS),
                              repeats=max(args.repeats, 5), batch=int(b.get("batch", bench.DEFAULT_BATCH)),
                              with_tape=bool(b.get("with_tape", False)) or args.with_tape,
                              seed=cfg.seed)
    name = "scaling_tape.csv" if rep.with_tape else "scaling.csv"
    rep.to_csv(args.out / name)
    for L, t, a in zip(rep.lengths, rep.wall_times_s, rep.alloc_bytes):
        print(f"L={L:<6d} time {t * 1e3:9.3f} ms  alloc {a:>12d} B")
    print(f"slope time {rep.fitted_slope:.3f}  alloc {rep.alloc_slope:.3f}")
    return 0


def cmd_inspect(args, doc) -> int:
    cfg = run_config(doc, args.seed)
    if args.checkpoint:
        params = network.load_checkpoint(_checkpoint_path(args))
    else:
        params = network.init_params(cfg)
    total = network.count_parameters(params)
    print(f"parameters: {total} ({network.parameter_bytes(params)} bytes)")
    for name, n in network.parameter_breakdown(params).items():
        print(f"  {name:<28} {n:>10d}")
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a synthetic series CSV"),
    "train": (cmd_train, "train, then write checkpoint, history and test metrics"),
    "evaluate": (cmd_evaluate, "score a saved checkpoint on one split"),
    "forecast": (cmd_forecast, "forecast the horizon after the last L ticks"),
    "verify-kkr": (cmd_verify_kkr, "Kramers-Kronig residuals over padding factors"),
    "bench-scaling": (cmd_bench_scaling, "time and allocation scaling of one block in L"),
    "inspect": (cmd_inspect, "parameter count and per-module breakdown"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fi2vts", description="Frequency-domain multivariate forecasting toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=_u64, help="unsigned 64-bit seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--repeats", type=_positive, default=1,
                       help="train: rerun with seeds seed..seed+N-1; bench-scaling: timing repeats")
        p.add_argument("--parallel-eval", type=_positive, default=1, metavar="N",
                       help="evaluation threads (read-only parameters)")
        p.add_argument("--record-runtime", action="store_true",
                       help="store wall time in metrics JSON (breaks byte-identical reruns)")
        if name in ("evaluate", "forecast", "inspect"):
            p.add_argument("--checkpoint", help=f"checkpoint file (default OUT/{CHECKPOINT})")
        if name == "evaluate":
            p.add_argument("--split", choices=data.SPLIT_NAMES, default="test")
        if name == "forecast":
            p.add_argument("--input", help="CSV whose last L rows form the lookback")
        if name == "bench-scaling":
            p.add_argument("--with-tape", action="store_true", help="record the autodiff tape too")
    return parser


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        doc = read_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        code = COMMANDS[args.command][0](args, doc)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
        return code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
