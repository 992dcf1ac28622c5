"""Delimited result exports and console tables."""

from __future__ import annotations

import csv

from .fusion import AUDIO, MODE_DCA, VISUAL, fuse_forward
from .synthdata import LabeledSequence
from .trainer import AblationRow, RunResult

__all__ = ["write_results_csv", "export_gates", "format_summary"]

RESULT_COLUMNS = ("mode", "seed", "ccc_valence", "ccc_arousal", "epochs_to_best")
GATE_COLUMNS = (
    "sequence_id",
    "clip",
    "modality",
    "gate_unattended",
    "gate_attended",
    "corrupted_flag",
)


def write_results_csv(path, rows: list[AblationRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.mode, r.seed, repr(float(r.ccc_valence)), repr(float(r.ccc_arousal)),
                 r.epochs_to_best]
            )


def export_gates(result: RunResult, val_data: list[LabeledSequence], path) -> None:
    """Dump per-clip gate weights on the validation set as CSV.

    One row per (sequence, clip, modality); only dca runs carry gates.
    """
    if result.mode != MODE_DCA:
        raise ValueError(f"gate export needs a dca-mode result, got mode {result.mode!r}")
    params = result.final_params
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GATE_COLUMNS)
        for seq_id, seq in enumerate(val_data):
            _, _, gates = fuse_forward(seq.xa, seq.xv, params, MODE_DCA)
            for clip in range(seq.clips):
                for modality in (AUDIO, VISUAL):
                    g = gates[modality].G.data[clip]
                    corrupted = (
                        int(seq.mask_for(modality)[clip])
                        if seq.corruption_mask is not None
                        else 0
                    )
                    writer.writerow(
                        [seq_id, clip, modality, repr(float(g[0])), repr(float(g[1])),
                         corrupted]
                    )


def format_summary(summary: dict[str, dict[str, float]]) -> str:
    """Render the per-mode mean +- std CCC table for the console."""
    lines = [f"{'mode':<6} {'ccc_valence':>20} {'ccc_arousal':>20}"]
    for mode, s in summary.items():
        lines.append(
            f"{mode:<6} {s['valence_mean']:>12.4f} ± {s['valence_std']:<6.4f}"
            f"{s['arousal_mean']:>12.4f} ± {s['arousal_std']:<6.4f}"
        )
    return "\n".join(lines)
