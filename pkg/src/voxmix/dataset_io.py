"""Dataset-on-disk layer: manifests, case reading/writing, indexing.

A dataset is a directory with NIfTI volumes plus a ``manifest`` JSON file
at its root listing the label schema and one record per case (one image
path per channel, one label path).  Augmented output directories reuse the
same manifest format so they can be re-indexed, re-audited or chained.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nifti
from .errors import DatasetInconsistency, SchemaViolation
from .model import (
    Case,
    CaseEntry,
    DatasetIndex,
    LabelMap,
    LabelSchema,
    Volume,
    compute_organ_stats,
)

MANIFEST_NAME = "manifest"
FORMAT_VERSION = 1

GEOM_TOL_MM = 1e-3  # shape/spacing agreement between channels and labels


@dataclass(frozen=True)
class ManifestCase:
    id: str
    image_paths: tuple[str, ...]
    label_path: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    schema: LabelSchema
    cases: tuple[ManifestCase, ...]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        ids = [c.id for c in self.cases]
        if len(set(ids)) != len(ids):
            raise DatasetInconsistency("duplicate case ids in manifest")
        channels = {len(c.image_paths) for c in self.cases}
        if len(channels) > 1:
            raise DatasetInconsistency(f"inconsistent channel counts: {sorted(channels)}")

    def abs_image_paths(self, case: ManifestCase) -> tuple[Path, ...]:
        return tuple(self.root / p for p in case.image_paths)

    def abs_label_path(self, case: ManifestCase) -> Path:
        return self.root / case.label_path

    def case(self, case_id: str) -> ManifestCase:
        for c in self.cases:
            if c.id == case_id:
                return c
        raise KeyError(case_id)


def manifest_path_of(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def save_manifest(manifest: DatasetManifest) -> Path:
    out = manifest.root / MANIFEST_NAME
    doc = {
        "format_version": manifest.format_version,
        "schema": manifest.schema.to_dict(),
        "cases": [
            {"id": c.id, "images": list(c.image_paths), "labels": c.label_path}
            for c in manifest.cases
        ],
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1) + "\n")
    return out


def load_manifest(path) -> DatasetManifest:
    mpath = manifest_path_of(path)
    try:
        doc = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetInconsistency(f"no manifest at {mpath}")
    except json.JSONDecodeError as exc:
        raise DatasetInconsistency(f"manifest {mpath} does not parse: {exc}")
    version = int(doc.get("format_version", 0))
    if version < 1:
        raise DatasetInconsistency(f"manifest {mpath}: missing format_version")
    schema = LabelSchema.from_dict(doc["schema"])
    cases = tuple(
        ManifestCase(str(c["id"]), tuple(str(p) for p in c["images"]), str(c["labels"]))
        for c in doc["cases"]
    )
    return DatasetManifest(mpath.parent, schema, cases, version)


def _check_geometry(path, ref_shape, ref_spacing, shape, spacing):
    if shape != ref_shape:
        raise DatasetInconsistency(f"{path}: grid shape {shape} != {ref_shape}")
    if any(abs(a - b) > GEOM_TOL_MM for a, b in zip(spacing, ref_spacing)):
        raise DatasetInconsistency(f"{path}: spacing {spacing} != {ref_spacing}")


def read_case(image_paths, label_path, schema: LabelSchema, case_id: str | None = None) -> Case:
    """Load one case; all channels and labels must share geometry."""
    image_paths = [Path(p) for p in image_paths]
    label_path = Path(label_path)
    if not image_paths:
        raise DatasetInconsistency("case needs at least one image channel")

    channels = []
    first = None
    for p in image_paths:
        img = nifti.read(p)
        if first is None:
            first = img
        else:
            _check_geometry(p, first.data.shape, first.spacing, img.data.shape, img.spacing)
        channels.append(np.asarray(img.data, dtype=np.float32))

    lab = nifti.read(label_path)
    _check_geometry(label_path, first.data.shape, first.spacing, lab.data.shape, lab.spacing)
    lab_data = lab.data
    if not np.issubdtype(lab_data.dtype, np.integer):
        rounded = np.rint(lab_data)
        if not np.array_equal(rounded, lab_data):
            raise SchemaViolation(f"{label_path}: non-integer label values")
        lab_data = rounded.astype(np.int32)

    volume = Volume(
        np.stack(channels, axis=0),
        first.spacing,
        first.origin,
        first.direction,
        source_dtype=first.source_dtype,
    )
    labels = LabelMap(lab_data, schema)
    if case_id is None:
        case_id = label_path.name.split(".")[0]
    return Case(case_id, volume, labels)


def _smallest_label_dtype(max_label: int):
    for dt in (np.uint8, np.uint16, np.uint32):
        if max_label <= np.iinfo(dt).max:
            return dt
    return np.uint64


def write_case(case: Case, image_paths, label_path) -> None:
    """Write a case back to disk; labels use the smallest fitting uint dtype."""
    image_paths = [Path(p) for p in image_paths]
    if len(image_paths) != case.volume.channels:
        raise DatasetInconsistency(
            f"case {case.id}: {case.volume.channels} channels but {len(image_paths)} paths"
        )
    vol = case.volume
    for ch, p in enumerate(image_paths):
        nifti.write(p, vol.data[ch], vol.spacing, vol.origin, vol.direction)
    max_label = max(case.schema.labels, default=0)
    lab = case.labels.data.astype(_smallest_label_dtype(max_label))
    nifti.write(Path(label_path), lab, vol.spacing, vol.origin, vol.direction)


def read_manifest_case(manifest: DatasetManifest, case_id: str) -> Case:
    c = manifest.case(case_id)
    return read_case(
        manifest.abs_image_paths(c), manifest.abs_label_path(c), manifest.schema, case_id=c.id
    )


def index_dataset(manifest_path) -> DatasetIndex:
    """Build the dataset catalog with stats for every (case, organ) pair.

    Case order is lexicographic by id.  Orientation must agree across the
    dataset; differing grid shapes are allowed (pair filtering handles
    them) and differing spacings are recorded per case.
    """
    manifest = load_manifest(manifest_path)
    if not manifest.cases:
        raise DatasetInconsistency(f"{manifest.root}: dataset is empty")

    entries = []
    stats: dict[tuple[str, int], object] = {}
    ref_direction = None
    for mc in sorted(manifest.cases, key=lambda c: c.id):
        try:
            case = read_manifest_case(manifest, mc.id)
        except Exception as exc:
            raise DatasetInconsistency(f"case {mc.id}: {exc}") from exc
        if ref_direction is None:
            ref_direction = case.volume.direction
        else:
            drift = np.max(
                np.abs(np.asarray(case.volume.direction) - np.asarray(ref_direction))
            )
            if drift > GEOM_TOL_MM:
                raise DatasetInconsistency(
                    f"case {mc.id}: orientation differs from the rest of the dataset"
                )
        entries.append(
            CaseEntry(
                mc.id,
                manifest.abs_image_paths(mc),
                manifest.abs_label_path(mc),
                case.shape,
                case.volume.spacing,
            )
        )
        for label in manifest.schema.labels:
            stats[(mc.id, label)] = compute_organ_stats(case, label)

    return DatasetIndex(manifest.root, manifest.schema, tuple(entries), stats)
