"""Immutable data model: volumes, label maps, cases and dataset catalogs.

Arrays are kept channel-major ``(C, D, W, H)`` for images and ``(D, W, H)``
for label grids.  All types freeze their arrays after construction so
instances can be shared across workers by reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import DatasetInconsistency, SchemaViolation


@dataclass(frozen=True)
class LabelSchema:
    """Ordered organ label table; background is implicitly 0."""

    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        entries = tuple((int(v), str(n)) for v, n in self.entries)
        object.__setattr__(self, "entries", entries)
        values = [v for v, _ in entries]
        names = [n for _, n in entries]
        if any(v <= 0 for v in values):
            raise SchemaViolation(f"label values must be > 0, got {values}")
        if len(set(values)) != len(values) or len(set(names)) != len(names):
            raise SchemaViolation("label values and organ names must be unique")

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for _, n in self.entries)

    def name_of(self, label: int) -> str:
        for v, n in self.entries:
            if v == label:
                return n
        raise SchemaViolation(f"label {label} not in schema")

    def __contains__(self, label: int) -> bool:
        return any(v == int(label) for v, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> list[dict]:
        return [{"label": v, "name": n} for v, n in self.entries]

    @classmethod
    def from_dict(cls, items) -> "LabelSchema":
        return cls(tuple((int(d["label"]), str(d["name"])) for d in items))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """Multi-channel 3-D scalar grid with physical spacing and origin.

    ``data`` has shape ``(channels, D, W, H)`` and dtype float32; the dtype
    the voxels had on disk is kept in ``source_dtype`` for provenance.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    source_dtype: str = "float32"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4:
            raise ValueError(f"volume data must be (C, D, W, H), got {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"degenerate volume shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive components, got {spacing}")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(
            self, "direction", tuple(tuple(float(x) for x in row) for row in self.direction)
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin, self.direction, self.source_dtype)


@dataclass(frozen=True)
class LabelMap:
    """Integer organ annotation grid paired with its schema."""

    data: np.ndarray
    schema: LabelSchema

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if not np.issubdtype(data.dtype, np.integer):
            raise SchemaViolation(f"label grid must be integer, got {data.dtype}")
        if data.ndim != 3:
            raise ValueError(f"label grid must be (D, W, H), got {data.shape}")
        labels = self.schema.labels
        min_v = int(data.min()) if data.size else 0
        max_v = int(data.max()) if data.size else 0
        if min_v < 0:
            raise SchemaViolation(f"label values not in schema: negative values (min {min_v})")
        # contiguous 1..N schemas need only the bounds check; anything else
        # gets a lookup-table scan (still O(N), no sort)
        if not (labels == tuple(range(1, len(labels) + 1)) and max_v <= len(labels)):
            table = np.zeros(max(max_v, max(labels, default=0)) + 1, dtype=bool)
            table[0] = True
            table[list(labels)] = True
            bad = ~table[data.ravel()]
            if bad.any():
                unknown = sorted({int(v) for v in data.ravel()[bad]})
                raise SchemaViolation(f"label values not in schema: {unknown}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "LabelMap":
        return LabelMap(data, self.schema)


@dataclass(frozen=True)
class Case:
    """One dataset case: image volume plus its manual annotation."""

    id: str
    volume: Volume
    labels: LabelMap

    def __post_init__(self):
        if self.volume.shape != self.labels.shape:
            raise DatasetInconsistency(
                f"case {self.id}: volume {self.volume.shape} vs labels {self.labels.shape}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.volume.shape

    @property
    def schema(self) -> LabelSchema:
        return self.labels.schema


@dataclass(frozen=True)
class OrganStats:
    """Voxel count, physical volume and centroid of one organ in one case."""

    case_id: str
    label: int
    voxel_count: int
    physical_volume: float
    centroid: tuple[float, float, float] | None
    present: bool


def extract_organ_mask(labels: LabelMap, label: int) -> np.ndarray:
    """Binary mask of one organ (or of the background for label 0)."""
    label = int(label)
    if label != 0 and label not in labels.schema:
        raise SchemaViolation(f"label {label} not in schema")
    return labels.data == label


def labels_from_masks(
    masks: Mapping[int, np.ndarray], schema: LabelSchema, shape: tuple[int, int, int]
) -> LabelMap:
    """Rebuild an integer grid from per-organ masks in schema order.

    Later schema entries overwrite earlier ones wherever masks overlap,
    which is the shared overlap rule of every augmentation strategy.
    """
    grid = np.zeros(shape, dtype=np.uint8 if max(schema.labels, default=0) < 256 else np.uint16)
    for label in schema.labels:
        m = masks.get(label)
        if m is not None:
            grid[m] = label
    return LabelMap(grid, schema)


def compute_organ_stats(case: Case, label: int) -> OrganStats:
    """Size and location statistics for one organ of one case."""
    mask = extract_organ_mask(case.labels, label)
    count = int(mask.sum())
    if count == 0:
        return OrganStats(case.id, int(label), 0, 0.0, None, False)
    sd, sw, sh = case.volume.spacing
    coords = np.argwhere(mask)
    centroid = tuple(float(c) for c in coords.mean(axis=0))
    return OrganStats(
        case.id, int(label), count, count * sd * sw * sh, centroid, True
    )


@dataclass(frozen=True)
class CaseEntry:
    """Catalog row: where a case lives on disk and its grid geometry."""

    id: str
    image_paths: tuple[Path, ...]
    label_path: Path
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]


@dataclass(frozen=True)
class DatasetIndex:
    """Catalog of a dataset with per-(case, organ) statistics."""

    root: Path
    schema: LabelSchema
    cases: tuple[CaseEntry, ...]
    stats: Mapping[tuple[str, int], OrganStats] = field(repr=False)

    def __post_init__(self):
        ids = [c.id for c in self.cases]
        if len(set(ids)) != len(ids):
            raise DatasetInconsistency(f"duplicate case ids in index: {ids}")
        expected = len(self.cases) * len(self.schema)
        if len(self.stats) != expected:
            raise DatasetInconsistency(
                f"index must hold {expected} organ stats, got {len(self.stats)}"
            )

    @property
    def case_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cases)

    def entry(self, case_id: str) -> CaseEntry:
        for c in self.cases:
            if c.id == case_id:
                return c
        raise KeyError(case_id)

    def stat(self, case_id: str, label: int) -> OrganStats:
        return self.stats[(case_id, int(label))]

    def organ_stats(self, label: int) -> Iterator[OrganStats]:
        for c in self.cases:
            yield self.stats[(c.id, int(label))]

    def organ_centroid_model(self, label: int) -> tuple[np.ndarray, np.ndarray, int]:
        """Per-axis mean/std of an organ's centroid over cases where present."""
        pts = np.array(
            [s.centroid for s in self.organ_stats(label) if s.present], dtype=np.float64
        )
        if pts.size == 0:
            return np.zeros(3), np.zeros(3), 0
        std = pts.std(axis=0, ddof=1) if len(pts) > 1 else np.zeros(3)
        return pts.mean(axis=0), std, len(pts)

    def __len__(self) -> int:
        return len(self.cases)
