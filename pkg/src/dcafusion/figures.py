"""Matplotlib renderings of the report data, written next to the CSVs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fusion import MODE_DCA, VISUAL, fuse_forward
from .metrics import EmotionTrack
from .synthdata import LabeledSequence
from .trainer import RunResult

__all__ = [
    "save_loss_curves",
    "save_ablation_bars",
    "save_gate_traces",
    "save_prediction_traces",
]


def save_loss_curves(runs: list[RunResult], path) -> None:
    """Training-loss history per run, colored by mode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = {"ca": "tab:blue", "dca": "tab:red"}
    seen = set()
    for run in runs:
        label = run.mode if run.mode not in seen else None
        seen.add(run.mode)
        ax.plot(run.loss_history, color=colors.get(run.mode, "gray"), alpha=0.7, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss (1 - mean CCC)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_bars(summary: dict[str, dict[str, float]], path) -> None:
    """Mean validation CCC per mode with std error bars, both dimensions."""
    modes = list(summary)
    x = np.arange(len(modes))
    width = 0.35
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, dim in enumerate(("valence", "arousal")):
        means = [summary[m][f"{dim}_mean"] for m in modes]
        stds = [summary[m][f"{dim}_std"] for m in modes]
        ax.bar(x + (i - 0.5) * width, means, width, yerr=stds, capsize=4, label=dim)
    ax.set_xticks(x, modes)
    ax.set_ylabel("validation CCC")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_gate_traces(
    result: RunResult, val_data: list[LabeledSequence], path, max_sequences: int = 4
) -> None:
    """Attended-branch gate weight per clip; corrupted clips are shaded."""
    if result.mode != MODE_DCA:
        raise ValueError("gate traces need a dca-mode result")
    count = min(max_sequences, len(val_data))
    fig, axes = plt.subplots(count, 1, figsize=(7, 2.0 * count), sharex=True, squeeze=False)
    for row, seq in enumerate(val_data[:count]):
        ax = axes[row, 0]
        _, _, gates = fuse_forward(seq.xa, seq.xv, result.final_params, MODE_DCA)
        for modality, style in (("audio", "tab:blue"), ("visual", "tab:red")):
            ax.plot(gates[modality].attended, color=style, label=modality)
        if seq.corruption_mask is not None:
            for clip in np.flatnonzero(seq.mask_for(VISUAL) | seq.mask_for("audio")):
                ax.axvspan(clip - 0.5, clip + 0.5, color="gray", alpha=0.25, lw=0)
        ax.set_ylim(-0.05, 1.05)
        ax.set_ylabel(f"seq {row}")
        if row == 0:
            ax.legend(loc="lower right", fontsize=8)
    axes[-1, 0].set_xlabel("clip")
    fig.suptitle("attended-branch gate weight (shaded: corrupted clips)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_prediction_traces(pred: EmotionTrack, gold: EmotionTrack, path) -> None:
    """Predicted vs reference valence/arousal for one sequence."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for ax, dim in zip(axes, ("valence", "arousal")):
        ax.plot(getattr(gold, dim), color="black", label="reference")
        ax.plot(getattr(pred, dim), color="tab:red", ls="--", label="prediction")
        ax.set_ylabel(dim)
        ax.set_ylim(-1.1, 1.1)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].set_xlabel("clip")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
