"""Command-line interface.

Subcommands: generate-data, finetune, unlearn, evaluate, report.
All outputs land under --out-dir (default rooted at $UNLEARNKIT_OUT_ROOT
or ./runs). Every command is deterministic given its flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .data import generate_corpus, load_corpus, save_corpus
from .harness import (ExperimentConfig, RunRecord, evaluate_model, finetune,
                      input_based_baseline, run_experiment, write_report,
                      METHOD_CHOICES)
from .metrics import csv_header
from .model import TinyLM


def _out_root() -> str:
    return os.environ.get("UNLEARNKIT_OUT_ROOT", "runs")


def _require_file(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _cmd_generate_data(args) -> int:
    corpus = generate_corpus(seed=args.seed, n_authors=args.authors,
                             qa_per_author=args.qa_per_author,
                             forget_ratio=args.forget_ratio,
                             n_perturbed=args.perturbed,
                             n_holdout_authors=args.holdout_authors)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.examples)} examples "
          f"({len(corpus.forget)} forget / {len(corpus.retain)} retain / "
          f"{len(corpus.holdout)} holdout) to {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    _require_file(args.corpus, "corpus")
    corpus = load_corpus(args.corpus)
    config = ExperimentConfig(
        corpus_path=args.corpus, seed=args.seed, arch=args.arch,
        context_window=args.context_window, window=args.window,
        embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
        depth=args.depth, finetune_lr=args.lr,
        finetune_threshold=args.threshold,
        finetune_max_epochs=args.max_epochs,
        finetune_batch_size=args.batch_size)

    def progress(epoch: int, nll: float) -> None:
        if not args.quiet and epoch % 10 == 0:
            print(f"epoch {epoch:4d}  train nll {nll:.4f}")

    model, history = finetune(config, corpus, progress=progress)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    model.save(args.out)
    print(f"memorized in {len(history)} epochs "
          f"(train nll {history[-1]:.4f}); checkpoint at {args.out}")
    return 0


def _experiment_config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        _require_file(args.config, "config file")
        base = ExperimentConfig.from_file(args.config)
    else:
        base = ExperimentConfig()
    out_dir = args.out_dir
    if out_dir is None:
        label = f"{args.method}-{args.optimizer}-seed{args.seed}"
        out_dir = os.path.join(_out_root(), label)
    return dataclasses.replace(
        base, corpus_path=args.corpus, method=args.method,
        optimizer=args.optimizer, lam=args.lam, beta=args.beta, lr=args.lr,
        lr_scale=args.lr_scale, epochs=args.epochs,
        batch_size=args.batch_size, schedule=args.schedule, seed=args.seed,
        eval_every=args.eval_every, k_percent=args.k_percent,
        iu_damping=args.iu_damping, out_dir=out_dir)


def _run_one(config_json: str, checkpoint: str) -> str:
    # module-level shape so the sweep executor can pickle the call
    config = ExperimentConfig.from_json(config_json)
    corpus = load_corpus(config.corpus_path)
    model = TinyLM.load(checkpoint)
    record = run_experiment(config, corpus, model)
    epoch, report = record.reports[-1]
    print(f"[{config.out_dir}] epoch {epoch}: "
          f"forget_acc {report.forget_acc:.3f} "
          f"retain_acc {report.retain_acc:.3f} "
          f"forget_quality {report.forget_quality:.3f}")
    return config.out_dir


def _cmd_unlearn(args) -> int:
    _require_file(args.corpus, "corpus")
    _require_file(args.checkpoint, "checkpoint")
    base = _experiment_config_from_args(args)
    if args.sweep is None:
        _run_one(base.to_json(), args.checkpoint)
        return 0

    _require_file(args.sweep, "sweep file")
    with open(args.sweep, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{args.sweep}: expected a non-empty JSON list of "
                         f"config override objects")
    configs = []
    for i, overrides in enumerate(entries):
        if not isinstance(overrides, dict):
            raise ValueError(f"{args.sweep}: entry {i} is not an object")
        cfg = dataclasses.replace(base, **overrides)
        if cfg.out_dir == base.out_dir:
            cfg = dataclasses.replace(cfg, out_dir=os.path.join(
                base.out_dir, f"sweep{i:02d}"))
        configs.append(cfg)
    out_dirs = {cfg.out_dir for cfg in configs}
    if len(out_dirs) != len(configs):
        raise ValueError("sweep entries collide on out_dir")
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        futures = [pool.submit(_run_one, cfg.to_json(), args.checkpoint)
                   for cfg in configs]
        for future in futures:
            future.result()
    print(f"sweep complete: {len(configs)} runs")
    return 0


def _cmd_evaluate(args) -> int:
    _require_file(args.corpus, "corpus")
    _require_file(args.checkpoint, "checkpoint")
    corpus = load_corpus(args.corpus)
    model = TinyLM.load(args.checkpoint)
    if args.baseline or args.system_prompt is not None:
        report = input_based_baseline(model, corpus,
                                      system_prompt=args.system_prompt,
                                      k_percent=args.k_percent)
    else:
        report = evaluate_model(model, corpus, k_percent=args.k_percent)
    row = report.csv_row(args.method_label, args.optimizer_label,
                         args.seed, args.epoch)
    print(csv_header())
    print(row)
    if args.csv is not None:
        fresh = not os.path.exists(args.csv)
        with open(args.csv, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(csv_header() + "\n")
            fh.write(row + "\n")
    return 0


def _cmd_report(args) -> int:
    records = []
    for run_dir in args.runs:
        path = os.path.join(run_dir, "run_record.json")
        _require_file(path, "run record")
        records.append(RunRecord.from_file(path))
    paths = write_report(records, args.out_dir, figures=not args.no_figures)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unlearnkit",
        description="Desk-scale unlearning experiments on a tiny token model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic QA corpus")
    p.add_argument("--out", required=True, help="output corpus file (.jsonl)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--authors", type=int, default=40)
    p.add_argument("--qa-per-author", type=int, default=10)
    p.add_argument("--forget-ratio", type=float, default=0.1)
    p.add_argument("--perturbed", type=int, default=4)
    p.add_argument("--holdout-authors", type=int, default=None)
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("finetune", help="memorize the corpus from scratch")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--arch", choices=("mlp", "linear"), default="mlp")
    p.add_argument("--context-window", type=int, default=128)
    p.add_argument("--window", type=int, default=24)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--hidden-dim", type=int, default=96)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("unlearn", help="run an unlearning method")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=METHOD_CHOICES, default="graddiff")
    p.add_argument("--optimizer", choices=("fo", "so"), default="so")
    p.add_argument("--lam", type=float, default=None,
                   help="retain weight (default: method-specific)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=None,
                   help="absolute rate; overrides --lr-scale")
    p.add_argument("--lr-scale", type=float,
                   default=ExperimentConfig().lr_scale)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--schedule", choices=("alternate", "combined"),
                   default="alternate")
    p.add_argument("--iu-damping", type=float, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--k-percent", type=float, default=20.0)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None,
                   help="JSON ExperimentConfig to start from")
    p.add_argument("--sweep", default=None,
                   help="JSON list of config overrides run in parallel")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_unlearn)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", default=None, help="append the row here")
    p.add_argument("--method-label", default="eval")
    p.add_argument("--optimizer-label", default="-")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--k-percent", type=float, default=20.0)
    p.add_argument("--baseline", action="store_true",
                   help="prepend the default refusal instruction")
    p.add_argument("--system-prompt", default=None,
                   help="prepend this text to every prompt")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="aggregate run records")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out-dir", default="report")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
