"""Command-line entry point: ``unlearnbench <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .datagen import export_bundle, generate, select_forget_speakers
from .errors import UnlearnBenchError
from .harness import (
    BaselineTrainingError,
    BenchmarkReport,
    ExperimentConfig,
    epoch_ablation,
    load_config,
    run_benchmark,
    sweep_lr,
)
from .reporting import emit_report, rows_to_csv, rows_to_markdown
from .unlearn import METHODS, MethodConfig

EXIT_OK, EXIT_CONFIG, EXIT_BASELINE, EXIT_IO = 0, 1, 2, 3


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML experiment config")
    common.add_argument("--seed", type=int, help="overrides the config seeds with a single seed")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--workers", type=int, help="parallel grid cells")
    common.add_argument("--format", choices=["csv", "json", "markdown"], action="append",
                        help="output format; repeatable")
    common.add_argument("--clock", choices=["wall", "work"], help="timing source (work = deterministic)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="unlearnbench", description="Speaker-unlearning benchmark on synthetic data.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset to files")
    sub.add_parser("bench", parents=[common], help="run the full method x lr grid")
    sw = sub.add_parser("sweep-lr", parents=[common], help="one method over a list of learning rates")
    sw.add_argument("--method", default="ng", choices=METHODS)
    sw.add_argument("--lrs", type=_floats, default=[5e-7, 5e-6, 5e-5, 5e-4], help="comma-separated, ascending")
    ab = sub.add_parser("ablate-epochs", parents=[common], help="vary original/gold training epochs")
    ab.add_argument("--method", default="ng_plus", choices=METHODS)
    ab.add_argument("--lr", type=float, default=5e-7)
    ab.add_argument("--epochs", type=_ints, default=[5, 7, 11, 15, 60], help="comma-separated, ascending")
    rp = sub.add_parser("report", parents=[common], help="re-render a saved JSON report")
    rp.add_argument("input", help="report.json written by `bench`")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.output_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    if args.format:
        cfg.report_formats = args.format
    if args.clock:
        cfg.clock = args.clock
    return cfg.validate()


def _write_rows(rows, formats, out_dir, stem):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            text, ext = rows_to_csv(rows), "csv"
        elif fmt == "json":
            text, ext = json.dumps([asdict(r) for r in rows], indent=2) + "\n", "json"
        else:
            text, ext = rows_to_markdown(rows), "md"
        path = out_dir / f"{stem}.{ext}"
        path.write_text(text)
        paths.append(path)
    return paths


def run(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    if args.command == "generate":
        seed = cfg.seeds[0]
        bundle = generate(cfg.gen_config.replace(seed=seed))
        request = select_forget_speakers(bundle, cfg.forget_min_samples, cfg.forget_band, seed)
        out.mkdir(parents=True, exist_ok=True)
        paths = export_bundle(bundle, out / "dataset.csv", request)
    elif args.command == "bench":
        paths = emit_report(run_benchmark(cfg), cfg.report_formats, out)
    elif args.command == "sweep-lr":
        rows = sweep_lr(cfg, args.method, args.lrs)
        paths = _write_rows(rows, args.format or ["csv"], out, f"sweep_{args.method}")
    elif args.command == "ablate-epochs":
        method_cfg = MethodConfig(args.method, lr=args.lr)
        rows = epoch_ablation(cfg, args.epochs, method_cfg)
        paths = _write_rows(rows, args.format or ["csv"], out, f"ablation_{args.method}")
    else:
        report = BenchmarkReport.from_json(Path(args.input).read_text())
        paths = emit_report(report, args.format or ["markdown"], out)
    for p in paths:
        print(p)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except BaselineTrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BASELINE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UnlearnBenchError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
