"""Figures for the report command: training curves and attention heatmaps.

Everything renders off-screen to files; nothing here is needed for training.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

HEADS = ("s", "o", "d", "sd", "so", "od")
HEAD_LABELS = {"s": "scene", "o": "object", "d": "direction",
               "sd": "scene-dir", "so": "scene-obj", "od": "obj-dir"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def training_curves(records, path, metrics=("SR", "SPL")):
    """One panel per metric, one line per split, against episodes seen."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics) + 1, figsize=(3.2 * (len(metrics) + 1), 2.6))
        splits = sorted({r["split"] for r in records})
        for ax, m in zip(axes, metrics):
            for split in splits:
                rows = [r for r in records if r["split"] == split]
                ax.plot([r["episodes"] for r in rows], [r[m] for r in rows], marker=".", label=split)
            ax.set_xlabel("episodes")
            ax.set_ylabel(m)
            ax.set_ylim(-0.02, 1.02)
        ax = axes[-1]
        rows = [r for r in records if r["split"] == splits[0]]
        ep = [r["episodes"] for r in rows]
        if rows and "il_per_step" in rows[0]:
            ax.plot(ep, [r["il_per_step"] for r in rows], label="IL / step")
            ax.plot(ep, [r["value"] for r in rows], label="value")
        ax.set_xlabel("episodes")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        for a in axes:
            a.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def attention_heatmap(dump, path):
    """Six language heads per step over the instruction tokens.

    ``dump`` is the list of records written by the inspect command: a header
    with the tokens followed by one record per executed step.
    """
    header = dump[0]
    steps = [r for r in dump[1:] if r.get("type") == "step"]
    tokens = header["tokens"]
    if not steps:
        raise ValueError("attention dump has no steps")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(HEADS), 1, figsize=(max(4.0, 0.28 * len(tokens) + 1.5),
                                                          1.0 + 0.9 * len(HEADS) * max(1, len(steps)) / 4),
                                 sharex=True)
        for ax, head in zip(axes, HEADS):
            A = np.array([s["language"].get(head, [np.nan] * len(tokens)) for s in steps])
            ax.imshow(A, aspect="auto", cmap="viridis", vmin=0.0, vmax=max(float(np.nanmax(A)), 1e-9))
            ax.set_ylabel(HEAD_LABELS[head], rotation=0, ha="right", va="center")
            ax.set_yticks(range(len(steps)))
            ax.set_yticklabels([str(s["step"]) for s in steps])
        axes[-1].set_xticks(range(len(tokens)))
        axes[-1].set_xticklabels(tokens, rotation=90)
        fig.suptitle(f"episode {header['episode_id']}")
        fig.tight_layout()
        return _save(fig, path)


def action_probabilities(dump, path):
    """Bar chart of p_t over candidates (+ stop) for each step."""
    steps = [r for r in dump[1:] if r.get("type") == "step"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(steps), figsize=(1.6 * len(steps) + 0.6, 2.0), sharey=True,
                                 squeeze=False)
        for ax, s in zip(axes[0], steps):
            p = s["action_probs"]
            labels = [str(c) for c in s["candidates"]] + ["stop"]
            colors = ["C1" if i == s["action"] else "C0" for i in range(len(p))]
            ax.bar(range(len(p)), p, color=colors)
            ax.set_xticks(range(len(p)))
            ax.set_xticklabels(labels, rotation=90)
            ax.set_title(f"t={s['step']}")
        axes[0][0].set_ylabel("p")
        axes[0][0].set_ylim(0, 1)
        fig.tight_layout()
        return _save(fig, path)


def ablation_bars(rows, path, metric="SR"):
    """rows: [{"variant": str, "split": str, metric: float}]."""
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    splits = list(dict.fromkeys(r["split"] for r in rows))
    width = 0.8 / max(len(splits), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 * len(variants) + 1.5, 2.6))
        for k, split in enumerate(splits):
            vals = [next((r[metric] for r in rows if r["variant"] == v and r["split"] == split), np.nan)
                    for v in variants]
            ax.bar(np.arange(len(variants)) + k * width, vals, width, label=split)
        ax.set_xticks(np.arange(len(variants)) + width * (len(splits) - 1) / 2)
        ax.set_xticklabels(variants, rotation=20)
        ax.set_ylabel(metric)
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
