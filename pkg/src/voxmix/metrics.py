"""Dice evaluation with micro and macro aggregation.

Micro pools intersection and size sums over all (sample, organ) pairs
before forming one global dice, which tracks overall voxel accuracy.
Macro averages the per-pair dice values unweighted, which makes small
organs count as much as large ones.  Pairs where the organ is absent from
both prediction and reference are undefined and excluded from both.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LabelMap


@dataclass(frozen=True)
class DiceEntry:
    sample_id: str
    label: int
    intersection: int
    pred_voxels: int
    ref_voxels: int

    @property
    def defined(self) -> bool:
        return (self.pred_voxels + self.ref_voxels) > 0

    @property
    def dice(self) -> float | None:
        denom = self.pred_voxels + self.ref_voxels
        if denom == 0:
            return None
        return 2.0 * self.intersection / denom

    def to_dict(self) -> dict:
        return {
            "record": "dice",
            "sample": self.sample_id,
            "label": self.label,
            "intersection": self.intersection,
            "pred_voxels": self.pred_voxels,
            "ref_voxels": self.ref_voxels,
            "dice": self.dice,
            "defined": self.defined,
        }


@dataclass
class DiceTable:
    entries: list[DiceEntry] = field(default_factory=list)

    def add_sample(self, sample_id: str, prediction: LabelMap, reference: LabelMap) -> None:
        for label in reference.schema.labels:
            self.entries.append(dice_entry(sample_id, prediction, reference, label))

    def defined_entries(self) -> list[DiceEntry]:
        return [e for e in self.entries if e.defined]


def dice_entry(sample_id: str, prediction: LabelMap, reference: LabelMap, label: int
               ) -> DiceEntry:
    if prediction.shape != reference.shape:
        raise ValueError(
            f"shape mismatch: prediction {prediction.shape} vs reference {reference.shape}"
        )
    a = prediction.data == label
    b = reference.data == label
    return DiceEntry(
        sample_id,
        int(label),
        int(np.count_nonzero(a & b)),
        int(np.count_nonzero(a)),
        int(np.count_nonzero(b)),
    )


def dice(prediction: LabelMap, reference: LabelMap, label: int) -> float | None:
    """Dice overlap of one organ; None when absent from both grids."""
    return dice_entry("", prediction, reference, label).dice


def aggregate(table: DiceTable, mode: str) -> float:
    """Collapse a dice table to one number, micro or macro style."""
    defined = table.defined_entries()
    if not defined:
        raise ValueError("dice table has no defined entries")
    if mode == "micro":
        inter = sum(e.intersection for e in defined)
        sizes = sum(e.pred_voxels + e.ref_voxels for e in defined)
        return 2.0 * inter / sizes
    if mode == "macro":
        return float(np.mean([e.dice for e in defined]))
    raise ValueError(f"mode must be micro or macro, got {mode!r}")


def per_organ_means(table: DiceTable) -> dict[int, float]:
    """Per-organ mean dice over defined entries (the macro breakdown)."""
    out: dict[int, float] = {}
    labels = sorted({e.label for e in table.defined_entries()})
    for label in labels:
        vals = [e.dice for e in table.defined_entries() if e.label == label]
        out[label] = float(np.mean(vals))
    return out


def summary(table: DiceTable) -> dict:
    return {
        "record": "summary",
        "micro": aggregate(table, "micro"),
        "macro": aggregate(table, "macro"),
        "per_organ": {str(k): v for k, v in per_organ_means(table).items()},
        "pairs": len(table.defined_entries()),
        "undefined_pairs": len(table.entries) - len(table.defined_entries()),
    }
