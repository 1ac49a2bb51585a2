"""Executable anatomy-plausibility audit for augmented cases.

Four detectors per case, mirroring the qualitative comparison the
strategies are known for:

* organ count    — 6-connected component count per organ equals its
                   expected count (1 for phantom organs)
* organ location — every present organ centroid lies within k=3 per-axis
                   standard deviations of the reference dataset's centroid
                   distribution (20 % grid-extent fallback below 5 cases)
* broken organs  — some organ has more components than expected
* artificial voxels — intensities not reproducible by pure voxel
                   selection, found by replaying provenance and diffing
                   against the selection reconstruction
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .errors import VoxmixError
from .model import Case, DatasetIndex, LabelMap
from .strategies import AugProvenance, replay

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)
LOCATION_K_SIGMA = 3.0
MIN_CASES_FOR_SIGMA = 5
EXTENT_TOLERANCE_FRAC = 0.2


class AuditError(VoxmixError):
    """Audit could not be evaluated (e.g. provenance does not replay)."""


@dataclass(frozen=True)
class AuditReport:
    output_id: str
    organ_components: dict[int, int]
    organ_count_correct: bool
    organ_locations_correct: bool
    location_violations: tuple[int, ...]
    broken_organs: bool
    broken_organ_labels: tuple[int, ...]
    artificial_voxels: bool | None
    artificial_voxel_count: int | None
    partial: bool
    reference_cases: int

    def to_dict(self) -> dict:
        return {
            "record": "audit",
            "output_id": self.output_id,
            "organ_components": {str(k): v for k, v in self.organ_components.items()},
            "organ_count_correct": self.organ_count_correct,
            "organ_locations_correct": self.organ_locations_correct,
            "location_violations": list(self.location_violations),
            "broken_organs": self.broken_organs,
            "broken_organ_labels": list(self.broken_organ_labels),
            "artificial_voxels": self.artificial_voxels,
            "artificial_voxel_count": self.artificial_voxel_count,
            "partial": self.partial,
            "reference_cases": self.reference_cases,
        }


def connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def organ_component_counts(labels: LabelMap, structure=SIX_CONNECTED) -> dict[int, int]:
    counts = {}
    for label in labels.schema.labels:
        mask = labels.data == label
        if not mask.any():
            counts[label] = 0
        else:
            counts[label] = int(ndimage.label(mask, structure=structure)[1])
    return counts


def _expected_map(expected, labels) -> dict[int, int]:
    if isinstance(expected, Mapping):
        return {int(l): int(expected.get(l, expected.get(str(l), 1))) for l in labels}
    return {int(l): int(expected) for l in labels}


def audit_case(
    augmented: Case,
    provenance: AugProvenance | None,
    reference: DatasetIndex,
    expected_components=1,
    accessor=None,
    k_sigma: float = LOCATION_K_SIGMA,
    connectivity: int = 6,
) -> AuditReport:
    """Audit one augmented case against the original dataset's statistics.

    Without provenance (or without an accessor to load the originals) the
    audit covers the geometric checks only and is flagged partial.
    """
    schema = augmented.schema
    expected = _expected_map(expected_components, schema.labels)

    components = organ_component_counts(
        augmented.labels, structure=connectivity_structure(connectivity)
    )
    count_ok = all(components[l] == expected[l] for l in schema.labels)
    broken = tuple(l for l in schema.labels if components[l] > expected[l])

    shape = np.asarray(augmented.shape, dtype=np.float64)
    violations = []
    for label in schema.labels:
        mask = augmented.labels.data == label
        if not mask.any():
            continue
        centroid = np.argwhere(mask).mean(axis=0)
        mean, std, n = reference.organ_centroid_model(label)
        if n >= MIN_CASES_FOR_SIGMA:
            tol = k_sigma * std
        else:
            tol = EXTENT_TOLERANCE_FRAC * shape
        if np.any(np.abs(centroid - mean) > tol):
            violations.append(label)

    artificial: bool | None = None
    artificial_count: int | None = None
    partial = True
    if provenance is not None and accessor is not None:
        recon, art_mask = replay(provenance, accessor)
        same = recon.volume.data == augmented.volume.data
        if not np.all(same | art_mask[None]):
            raise AuditError(
                f"{augmented.id}: output does not match its provenance replay "
                f"outside the interpolated region"
            )
        artificial_count = int(art_mask.sum())
        artificial = artificial_count > 0
        partial = False

    return AuditReport(
        output_id=augmented.id,
        organ_components=components,
        organ_count_correct=count_ok,
        organ_locations_correct=not violations,
        location_violations=tuple(violations),
        broken_organs=bool(broken),
        broken_organ_labels=broken,
        artificial_voxels=artificial,
        artificial_voxel_count=artificial_count,
        partial=partial,
        reference_cases=len(reference),
    )


def strategy_matrix(reports) -> dict[str, bool]:
    """Aggregate per-case reports into the strategy-level verdict row.

    Positive properties hold when every output satisfies them; failure
    modes are flagged when any output exhibits them.
    """
    reports = list(reports)
    if not reports:
        raise AuditError("no reports to aggregate")
    return {
        "correct_organ_count": all(r.organ_count_correct for r in reports),
        "correct_organ_locations": all(r.organ_locations_correct for r in reports),
        "broken_organs": any(r.broken_organs for r in reports),
        "artificial_voxels": any(bool(r.artificial_voxels) for r in reports),
    }
