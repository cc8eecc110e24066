"""Command-line entry point.

Subcommands: extract, learn-protos, run, bench, inspect-protos.  Flags
override config-file values; failures print one machine-parseable line
`error <category>: <message>` to stderr and exit nonzero (see README
for exit codes).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path

from . import harness, learning
from .gabor import make_bank
from .harness import ExperimentConfig, ingest_dataset, load_config, split
from .imgproc import load_grayscale, resize_height
from .layers import extract_features

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_INTERNAL = 1

_PIPELINE_FLAGS = (
    "conv_mode", "preprocess", "alpha", "c", "clahe_tile", "clahe_clip",
    "c1_overlap", "c1_embed", "beta", "sigma_mode", "target_height",
)


def _add_config_flags(parser, names):
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    for name in names:
        flag = "--" + name.replace("_", "-")
        default = defaults[name]
        parser.add_argument(flag, dest=name, type=type(default), default=None,
                            help=f"override config {name} (default {default})")


def _merge(cfg: ExperimentConfig, args, names) -> ExperimentConfig:
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _cmd_extract(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    _merge(cfg, args, _PIPELINE_FLAGS)
    cfg.prototype_source = "file"
    cfg.proto_file = args.protos
    cfg.validate()
    protos = learning.load_prototypes(args.protos)
    bank = make_bank(separable=(cfg.conv_mode == "separable"),
                     sigma_mode=cfg.sigma_mode)
    img = resize_height(load_grayscale(args.image), cfg.target_height)
    vec = extract_features(img, bank, protos, cfg.pipeline())
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(["prototype", "value"])
        for i, v in enumerate(vec):
            writer.writerow([i, repr(float(v))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _cmd_learn_protos(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    _merge(cfg, args, _PIPELINE_FLAGS + (
        "dataset_root", "n_train_per_class", "seed", "count_per_size",
        "pam_medoids_per_size", "pam_drop_per_size", "pam_pool_budget",
        "proto_bands", "proto_sizes"))
    if args.source:
        cfg.prototype_source = args.source
    cfg.validate()
    if cfg.prototype_source == "file":
        raise ValueError("learn-protos needs --source random or pam")
    ds = ingest_dataset(cfg.dataset_root)
    train, _ = split(ds, cfg.n_train_per_class, cfg.seed)
    bank = make_bank(separable=(cfg.conv_mode == "separable"),
                     sigma_mode=cfg.sigma_mode)
    protos, _ = harness.learn_prototypes(train, cfg, bank, cfg.pipeline(),
                                         cfg.seed)
    learning.save_prototypes(protos, args.out)
    print(f"wrote {len(protos)} prototypes to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    _merge(cfg, args, _PIPELINE_FLAGS + (
        "dataset_root", "output_dir", "n_train_per_class", "seed", "runs",
        "classifier", "svm_c", "svm_epochs", "count_per_size", "jobs",
        "proto_image_cap", "proto_bands", "proto_sizes"))
    if args.protos:
        if args.protos.startswith("file:"):
            cfg.prototype_source = "file"
            cfg.proto_file = args.protos[len("file:"):]
        else:
            cfg.prototype_source = args.protos
    report = harness.run_experiment(cfg)
    for i, (seed, acc) in enumerate(zip(report.seeds, report.accuracies)):
        print(f"run {i} seed {seed}: accuracy {acc:.4f}")
    print(f"mean accuracy over {len(report.accuracies)} runs: "
          f"{report.mean_accuracy:.4f}")
    stages = ", ".join(f"{k} {v:.2f}s" for k, v in
                       sorted(report.layer_seconds.items()))
    print(f"layer time: {stages}")
    print(f"report: {report.report_path}")
    print(f"confusion: {report.confusion_path}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise ValueError("no benchmark sizes given")
    rows = harness.benchmark_s1(sizes, repeats=args.repeats, seed=args.seed,
                                out_csv=args.out)
    for size, mode, mean_s, std_s in rows:
        print(f"{size:>5} {mode:<9} mean {mean_s:.4f}s std {std_s:.4f}s")
    if args.out:
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_inspect_protos(args) -> int:
    ps = learning.load_prototypes(args.protos)
    sys.stdout.write(learning.dump_prototypes_text(ps))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmax",
        description="HMAX recognition pipeline: feature extraction, "
                    "prototype learning, experiments and S1 benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="one image -> C2 vector CSV")
    p.add_argument("image")
    p.add_argument("--protos", required=True, help="prototype file (HMXP)")
    p.add_argument("--config", default="")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    _add_config_flags(p, _PIPELINE_FLAGS)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("learn-protos", help="learn and save a prototype set")
    p.add_argument("--source", choices=["random", "pam"], default="")
    p.add_argument("--out", default="protos.bin")
    p.add_argument("--config", default="")
    _add_config_flags(p, _PIPELINE_FLAGS + (
        "dataset_root", "n_train_per_class", "seed", "count_per_size",
        "pam_medoids_per_size", "pam_drop_per_size", "pam_pool_budget",
        "proto_bands", "proto_sizes"))
    p.set_defaults(func=_cmd_learn_protos)

    p = sub.add_parser("run", help="full train/test experiment")
    p.add_argument("--config", default="")
    p.add_argument("--protos", default="",
                   help="random, pam, or file:PATH to skip learning")
    _add_config_flags(p, _PIPELINE_FLAGS + (
        "dataset_root", "output_dir", "n_train_per_class", "seed", "runs",
        "classifier", "svm_c", "svm_epochs", "count_per_size", "jobs",
        "proto_image_cap", "proto_bands", "proto_sizes"))
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="S1 timing comparison")
    p.add_argument("--sizes", default="100,160,256",
                   help="comma-separated square image sizes")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("inspect-protos", help="text dump of a prototype file")
    p.add_argument("protos")
    p.set_defaults(func=_cmd_inspect_protos)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error io: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:
        print(f"error data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:   # pragma: no cover - safety net
        print(f"error internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
