"""Experiment orchestration: configs, fine-tuning, runs, and reports.

The flow mirrors the CLI: generate (or load) a corpus, fine-tune a fresh
model until it memorizes the training QAs, run an unlearning method with
per-epoch evaluation, and aggregate run records into a summary table
plus per-run plot data and figures.

Every artifact a run writes (config snapshot, trajectory log, metrics
CSV, checkpoint, run record) is deterministic given the config, except
wall-clock timings, which are quarantined in the run record so the CSVs
stay byte-identical across repeat runs.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import alphabet
from .data import Corpus, generate_corpus, load_corpus, tokenize_pair
from .influence import influence_unlearn_lm
from .metrics import MetricsReport, compute_report, csv_header
from .model import ModelConfig, TinyLM, init_params
from .numerics import rng_stream
from .optim import adamw_init, adamw_step
from .unlearn import (UnlearnRunConfig, UnlearnTask, run_unlearning,
                      write_trajectory_log)

METHOD_CHOICES = ("ga", "graddiff", "po", "npo", "iu")

# Unlearning learning rates are method defaults times this multiplier;
# the base rates suit billion-parameter models, the tiny model needs
# far larger steps (tuned on the seed-42 reference task).
DEFAULT_LR_SCALE = 25.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs. Defaults define the reference toy task."""

    # task: load corpus_path if set, other generation knobs ignored then
    corpus_path: str | None = None
    n_authors: int = 40
    qa_per_author: int = 10
    forget_ratio: float = 0.1
    n_perturbed: int = 4

    # model
    arch: str = "mlp"
    context_window: int = 128
    window: int = 24
    embed_dim: int = 8
    hidden_dim: int = 96
    depth: int = 2

    # fine-tuning (first-order descent until the corpus is memorized)
    finetune_lr: float = 3e-3
    finetune_threshold: float = 0.05
    finetune_max_epochs: int = 500
    finetune_batch_size: int = 32

    # unlearning
    method: str = "graddiff"
    optimizer: str = "so"
    lam: float | None = None    # None: method/optimizer default
    beta: float = 1.0
    lr: float | None = None     # None: method default times lr_scale
    lr_scale: float = DEFAULT_LR_SCALE
    epochs: int = 5
    batch_size: int = 8
    schedule: str = "alternate"
    iu_damping: float | None = None  # None: curvature-scaled default

    # bookkeeping
    seed: int = 42
    eval_every: int = 1
    k_percent: float = 20.0
    out_dir: str = "runs/exp"

    def __post_init__(self):
        if self.method not in METHOD_CHOICES:
            raise ValueError(
                f"method must be one of {METHOD_CHOICES}, got {self.method!r}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be positive, got {self.eval_every}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(vocab_size=alphabet.VOCAB_SIZE,
                           context_window=self.context_window,
                           hidden_dim=self.hidden_dim, depth=self.depth,
                           arch=self.arch, embed_dim=self.embed_dim,
                           window=self.window)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass
class RunRecord:
    """Append-only record of one experiment run."""

    config: dict
    reports: list = field(default_factory=list)  # (epoch, MetricsReport)
    final_checkpoint: str = ""
    timings: dict = field(default_factory=dict)

    def add_report(self, epoch: int, report: MetricsReport) -> None:
        self.reports.append((epoch, report))

    def final_report(self) -> MetricsReport:
        if not self.reports:
            raise ValueError("run record has no evaluations")
        return self.reports[-1][1]

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "reports": [
                {"epoch": epoch, **dataclasses.asdict(report)}
                for epoch, report in self.reports],
            "final_checkpoint": self.final_checkpoint,
            "timings": self.timings,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        record = cls(config=data["config"],
                     final_checkpoint=data.get("final_checkpoint", ""),
                     timings=data.get("timings", {}))
        for entry in data["reports"]:
            entry = dict(entry)
            epoch = entry.pop("epoch")
            record.add_report(epoch, MetricsReport(**entry))
        return record

    @classmethod
    def from_file(cls, path) -> "RunRecord":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def prepare_corpus(config: ExperimentConfig) -> Corpus:
    if config.corpus_path is not None:
        return load_corpus(config.corpus_path)
    return generate_corpus(seed=config.seed, n_authors=config.n_authors,
                           qa_per_author=config.qa_per_author,
                           forget_ratio=config.forget_ratio,
                           n_perturbed=config.n_perturbed)


def finetune(config: ExperimentConfig, corpus: Corpus,
             progress=None) -> tuple[TinyLM, list[float]]:
    """Train a fresh model on forget+retain until it memorizes them.

    First-order descent on minibatch mean NLL; stops at the first epoch
    whose full-training-set mean NLL drops below finetune_threshold.
    Raises RuntimeError if the budget runs out first, since every
    downstream measurement assumes a memorized model.
    """
    pairs = corpus.training_pairs()
    model = TinyLM(config.model_config(),
                   init_params(config.model_config(), config.seed))
    state = adamw_init(model.params.size, config.finetune_lr)
    order_rng = rng_stream(config.seed, "finetune-batch-order")
    history = []
    for epoch in range(config.finetune_max_epochs):
        order = order_rng.permutation(len(pairs))
        for lo in range(0, order.size, config.finetune_batch_size):
            batch = [pairs[i] for i in order[lo:lo + config.finetune_batch_size]]
            grad = model.grad_nll(batch)
            new_params, state = adamw_step(state, grad, model.params)
            model = TinyLM(model.config, new_params)
        epoch_nll = float(np.mean(model.per_example_nll(pairs)))
        history.append(epoch_nll)
        if progress is not None:
            progress(epoch, epoch_nll)
        if epoch_nll < config.finetune_threshold:
            return model, history
    raise RuntimeError(
        f"fine-tuning did not reach mean NLL < {config.finetune_threshold} "
        f"within {config.finetune_max_epochs} epochs (last: {history[-1]:.4f}); "
        f"raise finetune_max_epochs or shrink the corpus")


def _reject_tokens(corpus: Corpus, ref: str = "default") -> tuple:
    return tuple(alphabet.encode(text) + [alphabet.EOS_ID]
                 for text in corpus.reject_pool(ref))


def evaluate_model(model: TinyLM, corpus: Corpus,
                   k_percent: float = 20.0) -> MetricsReport:
    return compute_report(model, corpus.forget, corpus.retain, corpus.holdout,
                          k_percent=k_percent)


def run_experiment(config: ExperimentConfig, corpus: Corpus,
                   model: TinyLM) -> RunRecord:
    """Unlearn per config, evaluating on the eval_every cadence, and write
    all artifacts into config.out_dir."""
    os.makedirs(config.out_dir, exist_ok=True)
    record = RunRecord(config=dataclasses.asdict(config))
    eval_seconds = 0.0

    def evaluate_into(epoch: int, snapshot: TinyLM) -> None:
        nonlocal eval_seconds
        t0 = time.perf_counter()
        record.add_report(epoch, evaluate_model(snapshot, corpus,
                                                config.k_percent))
        eval_seconds += time.perf_counter() - t0

    total_t0 = time.perf_counter()
    if config.method == "iu":
        evaluate_into(0, model)
        t0 = time.perf_counter()
        unlearned = influence_unlearn_lm(model, corpus.training_pairs(),
                                         corpus.forget_indices(),
                                         damping=config.iu_damping)
        unlearn_seconds = time.perf_counter() - t0
        evaluate_into(1, unlearned)
        final = unlearned
    else:
        task = UnlearnTask(
            forget=tuple(tokenize_pair(ex) for ex in corpus.forget),
            retain=tuple(tokenize_pair(ex) for ex in corpus.retain),
            method=config.method, lam=config.lam, beta=config.beta,
            reject_answers=_reject_tokens(corpus))
        run_cfg = UnlearnRunConfig(
            optimizer=config.optimizer, lr=config.lr, lr_scale=config.lr_scale,
            epochs=config.epochs, batch_size=config.batch_size,
            seed=config.seed, schedule=config.schedule)

        def on_epoch(epoch: int, snapshot: TinyLM) -> None:
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                evaluate_into(epoch, snapshot)

        result = run_unlearning(model, task, run_cfg, epoch_callback=on_epoch)
        write_trajectory_log(result.records,
                             os.path.join(config.out_dir, "trajectory.log"),
                             notes=result.notes)
        unlearn_seconds = result.wall_seconds - eval_seconds
        final = result.model

    checkpoint_path = os.path.join(config.out_dir, "final.ckpt")
    final.save(checkpoint_path)
    record.final_checkpoint = checkpoint_path
    record.timings = {
        "unlearn_seconds": unlearn_seconds,
        "eval_seconds": eval_seconds,
        "total_seconds": time.perf_counter() - total_t0,
    }

    with open(os.path.join(config.out_dir, "config.json"), "w",
              encoding="utf-8") as fh:
        fh.write(config.to_json() + "\n")
    _write_metrics_csv(record, os.path.join(config.out_dir, "metrics.csv"))
    with open(os.path.join(config.out_dir, "run_record.json"), "w",
              encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")
    return record


def _run_label(config: dict) -> tuple[str, str, int]:
    method = config["method"]
    optimizer = "-" if method == "iu" else config["optimizer"]
    return method, optimizer, int(config["seed"])


def _write_metrics_csv(record: RunRecord, path) -> None:
    method, optimizer, seed = _run_label(record.config)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(csv_header() + "\n")
        for epoch, report in record.reports:
            fh.write(report.csv_row(method, optimizer, seed, epoch) + "\n")


def default_system_prompt(corpus: Corpus) -> str:
    names = ", ".join(corpus.forget_authors)
    return ("Please refrain from responding to the following authors' "
            f"information: {names}. ")


def input_based_baseline(model: TinyLM, corpus: Corpus,
                         system_prompt: str | None = None,
                         k_percent: float = 20.0) -> MetricsReport:
    """Evaluate with a refusal instruction prepended to every prompt.

    No weights change; this is the prompting baseline. Raises if any
    prefixed example no longer fits the model's context window.
    """
    if system_prompt is None:
        system_prompt = default_system_prompt(corpus)
    alphabet.encode(system_prompt)  # fail fast on unrepresentable text

    def prefixed(examples):
        out = []
        for ex in examples:
            total = (len(system_prompt) + len(ex.prompt)
                     + len(ex.answer) + 1)  # +1 for the end marker
            if total > model.config.context_window:
                raise ValueError(
                    f"example {ex.id}: system prompt pushes the sequence to "
                    f"{total} tokens, beyond context_window "
                    f"{model.config.context_window}")
            out.append(dataclasses.replace(ex, prompt=system_prompt + ex.prompt))
        return out

    return compute_report(model, prefixed(corpus.forget),
                          prefixed(corpus.retain), prefixed(corpus.holdout),
                          k_percent=k_percent)


# -- report emission ---------------------------------------------------------


def write_report(records: list[RunRecord], out_dir,
                 figures: bool = True) -> dict:
    """Aggregate run records into summary table, plot data, and figures.

    Writes summary.csv (one row per run, final-epoch metrics),
    summary.txt (rendered table), plotdata-<method>-<optimizer>-<seed>.txt
    per run with (epoch, forget_acc, retain_acc) columns, and, unless
    disabled, PNG figures rendered from the same data.
    """
    if not records:
        raise ValueError("need at least one run record to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    rows = []
    for record in records:
        method, optimizer, seed = _run_label(record.config)
        epoch, report = record.reports[-1]
        rows.append(report.csv_row(method, optimizer, seed, epoch))
    csv_path = os.path.join(out_dir, "summary.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(csv_header() + "\n")
        for row in rows:
            fh.write(row + "\n")
    paths["summary_csv"] = csv_path

    table_path = os.path.join(out_dir, "summary.txt")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(render_table([csv_header()] + rows) + "\n")
    paths["summary_txt"] = table_path

    curves = []
    for record in records:
        method, optimizer, seed = _run_label(record.config)
        label = f"{method}-{optimizer}-{seed}"
        epochs = [epoch for epoch, _ in record.reports]
        forget = [r.forget_acc for _, r in record.reports]
        retain = [r.retain_acc for _, r in record.reports]
        curves.append((label, epochs, forget, retain))
        plot_path = os.path.join(out_dir, f"plotdata-{label}.txt")
        with open(plot_path, "w", encoding="utf-8") as fh:
            fh.write("# columns: epoch forget_acc retain_acc\n")
            for e, f_acc, r_acc in zip(epochs, forget, retain):
                fh.write(f"{e} {f_acc!r} {r_acc!r}\n")
        paths[f"plotdata_{label}"] = plot_path

    if figures:
        from .plotting import accuracy_figure, summary_figure
        paths["figure_accuracy"] = accuracy_figure(
            curves, os.path.join(out_dir, "accuracy_vs_epoch.png"))
        paths["figure_summary"] = summary_figure(
            records, os.path.join(out_dir, "summary_metrics.png"))
    return paths


def render_table(csv_rows: list[str]) -> str:
    """Fixed-width text table from CSV rows (first row is the header)."""
    grid = []
    for row in csv_rows:
        cells = row.split(",")
        out = []
        for cell in cells:
            try:
                out.append(f"{float(cell):.4f}" if "." in cell else cell)
            except ValueError:
                out.append(cell)
        grid.append(out)
    widths = [max(len(r[i]) for r in grid) for i in range(len(grid[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in grid]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
