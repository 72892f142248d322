"""Figure rendering for report output. Headless by construction."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_EFFICACY = ("forget_quality", "forget_acc", "rouge_forget", "bleu", "mia_auc")
_UTILITY = ("retain_acc", "rouge_retain", "holdout_acc")


def accuracy_figure(curves, path) -> str:
    """Forget and retain accuracy versus epoch, one line per run.

    ``curves`` is a list of (label, epochs, forget_acc, retain_acc).
    """
    fig, (ax_f, ax_r) = plt.subplots(1, 2, figsize=(9.0, 3.6), sharey=True)
    for label, epochs, forget, retain in curves:
        ax_f.plot(epochs, forget, marker="o", label=label)
        ax_r.plot(epochs, retain, marker="o", label=label)
    ax_f.set_title("forget accuracy")
    ax_r.set_title("retain accuracy")
    for ax in (ax_f, ax_r):
        ax.set_xlabel("epoch")
        ax.set_ylim(-0.05, 1.05)
        ax.grid(True, alpha=0.3)
    ax_f.set_ylabel("multiple-choice accuracy")
    ax_f.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def summary_figure(records, path) -> str:
    """Grouped bars of final-epoch metrics, one group per run."""
    labels = []
    for record in records:
        cfg = record.config
        opt = "-" if cfg["method"] == "iu" else cfg["optimizer"]
        labels.append(f"{cfg['method']}-{opt}-{cfg['seed']}")
    metric_names = _EFFICACY + _UTILITY
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(metric_names), 3.8))
    width = 0.8 / max(len(records), 1)
    for i, (record, label) in enumerate(zip(records, labels)):
        report = record.reports[-1][1]
        values = [getattr(report, name) for name in metric_names]
        offsets = [j + i * width for j in range(len(metric_names))]
        ax.bar(offsets, values, width=width, label=label)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(metric_names))])
    ax.set_xticklabels(metric_names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("value")
    ax.set_ylim(0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
