"""Figures written next to the evaluation report and training histories."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings in the PNG so reruns are byte-stable
_PNG_META = {"Software": None}

_PANELS = (
    ("target_posterior", "target posterior"),
    ("retention_mse", "posteriorgram MSE"),
    ("mcd_vs_target", "MCD to target [dB]"),
)


def plot_report(report, stem) -> list[Path]:
    """One bar chart per speaker pair: conditions x {deception, retention, MCD}."""
    stem = Path(stem)
    groups: dict = {}
    for c in sorted(report.conditions, key=lambda c: c.key):
        groups.setdefault((c.source, c.target), []).append(c)
    written = []
    for (src, tgt), conds in sorted(groups.items()):
        fig, axes = plt.subplots(1, len(_PANELS), figsize=(4 * len(_PANELS), 3.2))
        labels = [c.key.split("|", 1)[0] + _suffix(c) for c in conds]
        for ax, (metric, title) in zip(axes, _PANELS):
            vals = [c.aggregate()[metric] for c in conds]
            vals = [np.nan if v is None else v for v in vals]
            ax.bar(np.arange(len(vals)), vals, color="0.4")
            ax.set_xticks(np.arange(len(vals)))
            ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
            ax.set_title(title, fontsize=9)
        fig.suptitle(f"speaker {src} -> {tgt}", fontsize=10)
        fig.tight_layout()
        out = stem.with_name(f"{stem.name}_{src}to{tgt}.png")
        fig.savefig(out, dpi=100, metadata=_PNG_META)
        plt.close(fig)
        written.append(out)
    return written


def _suffix(c) -> str:
    if c.n_utts is not None:
        return f"-{c.n_utts}"
    if c.omega is not None:
        return f" w={c.omega:g}"
    return ""


def plot_histories(histories: dict, path) -> Path:
    """Loss (left) and tracked metric (right) per epoch for each named run."""
    fig, (ax_l, ax_m) = plt.subplots(1, 2, figsize=(9, 3.2))
    for name, hist in sorted(histories.items()):
        epochs = np.arange(1, len(hist.losses) + 1)
        ax_l.plot(epochs, hist.losses, label=name)
        ax_m.plot(epochs, hist.metrics, label=f"{name} ({hist.metric_name})")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("training loss")
    ax_l.set_yscale("log")
    ax_m.set_xlabel("epoch")
    ax_m.legend(fontsize=6)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
