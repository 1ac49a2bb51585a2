"""The four inter-image / object-level augmentation strategies.

Every strategy is a pure function of its operand cases plus an explicit
RNG, returns a new case together with a provenance record, and resolves
organ overlap identically: organs are pasted in schema order and later
labels overwrite earlier ones.  Box mixing, organ carving and organ
transplantation move voxels by pure selection or exact integer shifts, so
their outputs contain no synthesized intensities; object-level
augmentation is the one strategy that interpolates and inpaints.

``replay`` regenerates any output bit-exactly from its provenance and also
returns the mask of artificial voxels (inpainted or interpolated), which
the audit module diffs against.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AugmentationError, PlanningError
from .inpaint import InpaintParams, erase_organs, inpaint
from .model import Case, DatasetIndex, LabelMap, labels_from_masks
from .transforms import (
    AffineParams,
    BoxMask,
    apply_affine,
    apply_affine_mask,
    integer_shift,
    mask_centroid,
    rotation_matrix,
    sample_cutmix_box,
)

DEFAULT_BETA = (0.5, 0.5)
OBJECTAUG_SCALE_RANGE = 0.10   # +-10 % per axis
OBJECTAUG_SHIFT_RANGE = 5.0    # +-5 voxels per axis
OBJECTAUG_ROTATION_RANGE = 15.0  # +-15 degrees per axis
ANATOMIX_SPACING_TOL = 0.05    # max relative spacing mismatch at planning


@dataclass(frozen=True)
class AugProvenance:
    """Everything needed to regenerate one augmented case bit-exactly."""

    strategy: str
    background_id: str
    source_ids: tuple[str, ...]
    seed: int | None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "background": self.background_id,
            "sources": list(self.source_ids),
            "seed": self.seed,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugProvenance":
        return cls(
            d["strategy"],
            d["background"],
            tuple(d["sources"]),
            d["seed"],
            d.get("params", {}),
        )


def _check_pair(background: Case, source: Case) -> None:
    if background.shape != source.shape:
        raise AugmentationError(
            f"cases {background.id}/{source.id}: grid shapes differ "
            f"{background.shape} vs {source.shape}"
        )
    if background.volume.channels != source.volume.channels:
        raise AugmentationError(
            f"cases {background.id}/{source.id}: channel counts differ"
        )
    if any(
        abs(a - b) > 1e-3 for a, b in zip(background.volume.spacing, source.volume.spacing)
    ):
        raise AugmentationError(
            f"cases {background.id}/{source.id}: spacings differ "
            f"{background.volume.spacing} vs {source.volume.spacing}"
        )
    if background.schema != source.schema:
        raise AugmentationError(
            f"cases {background.id}/{source.id}: label schemas differ"
        )


# ---------------------------------------------------------------------------
# box mixing
# ---------------------------------------------------------------------------

def cutmix(
    background: Case,
    source: Case,
    rng: np.random.Generator | None = None,
    box: BoxMask | None = None,
    beta_params: tuple[float, float] = DEFAULT_BETA,
    output_id: str | None = None,
) -> tuple[Case, AugProvenance]:
    """Paste one random box of the source case into the background case.

    Image and every organ channel are fused with the same box, which makes
    the output label grid equal the source's inside the box and the
    background's outside.
    """
    _check_pair(background, source)
    if box is None:
        if rng is None:
            raise AugmentationError("cutmix needs an rng when no box is forced")
        box = sample_cutmix_box(background.shape, rng, *beta_params)
    # region-of-interest copy: identical to fusing under the box mask but
    # touches only the box, which is what makes box mixing cheap
    roi = tuple(slice(lo, up) for lo, up in zip(box.lower, box.upper))
    img = np.array(background.volume.data, copy=True)
    img[(slice(None),) + roi] = source.volume.data[(slice(None),) + roi]
    volume = background.volume.with_data(img)
    grid = np.array(background.labels.data, copy=True)
    grid[roi] = source.labels.data[roi]
    prov = AugProvenance(
        "cutmix",
        background.id,
        (source.id,),
        None,
        {
            "beta": list(beta_params),
            "box": {
                "lower": list(box.lower),
                "upper": list(box.upper),
                "sampled_sides": list(box.sampled_sides),
            },
        },
    )
    out_id = output_id or f"cutmix({background.id},{source.id})"
    return Case(out_id, volume, LabelMap(grid, background.schema)), prov


def _cutmix_replay(background: Case, source: Case, prov: AugProvenance) -> Case:
    b = prov.params["box"]
    box = BoxMask(
        tuple(b["lower"]), tuple(b["upper"]), background.shape, tuple(b["sampled_sides"])
    )
    case, _ = cutmix(background, source, box=box)
    return case


# ---------------------------------------------------------------------------
# organ carving
# ---------------------------------------------------------------------------

def carvemix(
    background: Case, source: Case, output_id: str | None = None
) -> tuple[Case, AugProvenance]:
    """Carve every source organ into the background at the same coordinates.

    The output mask of organ j is the union of both cases' organ-j masks;
    painting the unions in schema order resolves overlaps.
    """
    _check_pair(background, source)
    acc = np.array(background.volume.data, copy=True)
    masks: dict[int, np.ndarray] = {}
    for label in background.schema.labels:
        m_src = source.labels.data == label
        if m_src.any():
            acc = np.where(m_src[None], source.volume.data, acc)
        masks[label] = (background.labels.data == label) | m_src
    labels = labels_from_masks(masks, background.schema, background.shape)
    prov = AugProvenance("carvemix", background.id, (source.id,), None, {})
    out_id = output_id or f"carvemix({background.id},{source.id})"
    return Case(out_id, background.volume.with_data(acc), labels), prov


# ---------------------------------------------------------------------------
# object-level augmentation
# ---------------------------------------------------------------------------

def _sample_object_transform(
    rng: np.random.Generator,
    organ_centroid: np.ndarray,
    grid_center: np.ndarray,
    scale_range: float,
    shift_range: float,
    rotation_range: float,
) -> AffineParams:
    """Draw one organ transform; rotation and scaling act about the organ.

    The grid-level affine acts about the volume center, so the sampled
    object-centered transform is expressed through a compensated shift:
    t = S R (c - x0) + x0 + u - c for organ centroid x0 and random shift u.
    """
    scale = 1.0 + rng.uniform(-scale_range, scale_range, 3)
    shift_raw = rng.uniform(-shift_range, shift_range, 3)
    rot = rng.uniform(-rotation_range, rotation_range, 3)
    sr = np.diag(scale) @ rotation_matrix(rot)
    t = sr @ (grid_center - organ_centroid) + organ_centroid + shift_raw - grid_center
    return AffineParams(tuple(scale), tuple(t), tuple(rot))


def _objectaug_core(
    background: Case,
    transforms: dict[int, AffineParams | None],
    inpainter,
    inpaint_params: InpaintParams,
    hole_dilation: int,
) -> tuple[Case, np.ndarray]:
    from scipy.ndimage import binary_dilation

    base = erase_organs(background, inpainter, inpaint_params)
    acc = np.array(base.data, copy=True)
    covered = np.zeros(background.shape, dtype=bool)
    artificial = np.zeros(background.shape, dtype=bool)
    masks: dict[int, np.ndarray] = {}
    for label in background.schema.labels:
        params = transforms.get(label)
        if params is None:
            continue
        m = background.labels.data == label
        img_t = apply_affine(background.volume, params, fill=0.0)
        mask_t = apply_affine_mask(m, params)
        acc = np.where(mask_t[None], img_t.data, acc)
        covered |= mask_t
        if not params.is_exact_shift:
            artificial |= mask_t
        masks[label] = mask_t

    hole = (background.labels.data > 0) & ~covered
    if hole_dilation > 0 and hole.any():
        structure = np.zeros((3, 3, 3), dtype=bool)
        structure[1, 1, 1] = structure[0, 1, 1] = structure[2, 1, 1] = True
        structure[1, 0, 1] = structure[1, 2, 1] = structure[1, 1, 0] = structure[1, 1, 2] = True
        hole = binary_dilation(hole, structure, iterations=hole_dilation) & ~covered
    volume = inpaint(background.volume.with_data(acc), hole, inpaint_params) \
        if hole.any() else background.volume.with_data(acc)
    artificial |= hole
    labels = labels_from_masks(masks, background.schema, background.shape)
    return Case(background.id, volume, labels), artificial


def objectaug(
    background: Case,
    inpainter=None,
    rng: np.random.Generator | None = None,
    transforms: dict[int, AffineParams] | None = None,
    inpaint_params: InpaintParams = InpaintParams(),
    hole_dilation: int = 1,
    scale_range: float = OBJECTAUG_SCALE_RANGE,
    shift_range: float = OBJECTAUG_SHIFT_RANGE,
    rotation_range: float = OBJECTAUG_ROTATION_RANGE,
    output_id: str | None = None,
) -> tuple[Case, AugProvenance]:
    """Erase all organs, transform each one independently, paste back, inpaint.

    Transforms are sampled per organ (scale, shift, rotation per axis) and
    applied about the organ's own centroid; voxels that were organ-labeled
    in the input but are covered by no transformed organ form the hole
    that the final inpainting pass fills (dilated by ``hole_dilation`` to
    absorb discretization halos).
    """
    if transforms is None:
        if rng is None:
            raise AugmentationError("objectaug needs an rng when no transforms are forced")
        grid_center = (np.asarray(background.shape, dtype=np.float64) - 1.0) / 2.0
        transforms = {}
        for label in background.schema.labels:
            m = background.labels.data == label
            if not m.any():
                transforms[label] = None
                continue
            x0 = np.asarray(mask_centroid(m))
            transforms[label] = _sample_object_transform(
                rng, x0, grid_center, scale_range, shift_range, rotation_range
            )
    fill = inpainter if inpainter is not None else inpaint

    case, _ = _objectaug_core(
        background, transforms, fill, inpaint_params, hole_dilation
    )
    prov = AugProvenance(
        "objectaug",
        background.id,
        (),
        None,
        {
            "organs": [
                {"label": label, "affine": p.to_dict() if p is not None else None}
                for label, p in sorted(transforms.items())
            ],
            "hole_dilation": hole_dilation,
            "inpaint": {
                "max_iters": inpaint_params.max_iters,
                "epsilon": inpaint_params.epsilon,
            },
        },
    )
    out_id = output_id or f"objectaug({background.id})"
    return replace(case, id=out_id), prov


def _objectaug_replay(background: Case, prov: AugProvenance) -> tuple[Case, np.ndarray]:
    transforms = {
        o["label"]: AffineParams.from_dict(o["affine"]) if o["affine"] is not None else None
        for o in prov.params["organs"]
    }
    ip = prov.params.get("inpaint", {})
    params = InpaintParams(
        int(ip.get("max_iters", 500)), float(ip.get("epsilon", 0.1))
    )
    return _objectaug_core(
        background, transforms, inpaint, params, int(prov.params.get("hole_dilation", 1))
    )


# ---------------------------------------------------------------------------
# organ transplantation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanEntry:
    donor_id: str
    offset: tuple[int, int, int]
    degenerate: bool = False  # self-match because no other case has the organ


@dataclass(frozen=True)
class AnatoPlan:
    """Donor assignment and integer shift for every (case, organ) pair."""

    entries: dict[tuple[str, int], PlanEntry]
    warnings: tuple[str, ...] = ()

    def for_case(self, case_id: str) -> dict[int, PlanEntry]:
        return {lab: e for (cid, lab), e in self.entries.items() if cid == case_id}

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "case": cid,
                    "label": lab,
                    "donor": e.donor_id,
                    "offset": list(e.offset),
                    "degenerate": e.degenerate,
                }
                for (cid, lab), e in sorted(self.entries.items())
            ],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnatoPlan":
        entries = {
            (r["case"], int(r["label"])): PlanEntry(
                r["donor"], tuple(int(x) for x in r["offset"]), bool(r.get("degenerate"))
            )
            for r in d["entries"]
        }
        return cls(entries, tuple(d.get("warnings", ())))


def anatomix_plan(index: DatasetIndex) -> AnatoPlan:
    """Match every present organ with the size-closest donor organ elsewhere.

    Donor = argmin over other cases of the physical-volume difference,
    ties broken by lexicographically smaller case id; the offset aligns the
    donor centroid with the recipient centroid, rounded to whole voxels.
    An organ present in fewer than two cases maps to itself with zero
    offset and is recorded as a warning.
    """
    if len(index) == 0:
        raise PlanningError("cannot plan on an empty index")
    spacings = np.array([c.spacing for c in index.cases], dtype=np.float64)
    rel = (spacings.max(axis=0) - spacings.min(axis=0)) / spacings.min(axis=0)
    if np.any(rel > ANATOMIX_SPACING_TOL):
        raise PlanningError(
            f"spacing mismatch across cases exceeds {ANATOMIX_SPACING_TOL:.0%}: {rel}"
        )

    entries: dict[tuple[str, int], PlanEntry] = {}
    warnings: list[str] = []
    for label in index.schema.labels:
        present = [s for s in index.organ_stats(label) if s.present]
        for stat in present:
            candidates = [s for s in present if s.case_id != stat.case_id]
            if not candidates:
                entries[(stat.case_id, label)] = PlanEntry(stat.case_id, (0, 0, 0), True)
                warnings.append(
                    f"organ {label} present only in case {stat.case_id}; self-matched"
                )
                continue
            donor = min(
                candidates,
                key=lambda s: (abs(s.physical_volume - stat.physical_volume), s.case_id),
            )
            offset = tuple(
                int(np.rint(a - b)) for a, b in zip(stat.centroid, donor.centroid)
            )
            entries[(stat.case_id, label)] = PlanEntry(donor.case_id, offset)
    return AnatoPlan(entries, tuple(warnings))


def anatomix_apply(
    background: Case,
    plan: AnatoPlan,
    accessor,
    rng: np.random.Generator | None = None,
    output_id: str | None = None,
) -> tuple[Case, AugProvenance]:
    """Replace each organ with its planned donor organ, shifted into place.

    Donor voxels move by an exact integer shift (never resampled); the
    output mask of organ j is the union of the recipient mask and the
    shifted donor mask.  ``rng`` is accepted for interface symmetry but
    transplantation is fully determined by the plan.
    """
    del rng
    case_plan = plan.for_case(background.id)
    acc = np.array(background.volume.data, copy=True)
    masks: dict[int, np.ndarray] = {}
    plan_snapshot = []
    donor_ids: list[str] = []
    for label in background.schema.labels:
        m_b = background.labels.data == label
        entry = case_plan.get(label)
        if entry is None:
            if m_b.any():
                masks[label] = m_b
            continue
        try:
            donor = accessor(entry.donor_id) if entry.donor_id != background.id else background
        except Exception as exc:
            raise AugmentationError(
                f"anatomix: donor case {entry.donor_id!r} for organ {label} "
                f"of {background.id!r} unavailable: {exc}"
            ) from exc
        _check_pair(background, donor)
        m_don = donor.labels.data == label
        shifted_mask = integer_shift(m_don, entry.offset, fill=False)
        shifted_img = np.stack(
            [
                integer_shift(donor.volume.data[ch], entry.offset, fill=np.float32(0.0))
                for ch in range(donor.volume.channels)
            ]
        )
        acc = np.where(shifted_mask[None], shifted_img, acc)
        masks[label] = m_b | shifted_mask
        if entry.donor_id != background.id:
            donor_ids.append(entry.donor_id)
        plan_snapshot.append(
            {
                "label": label,
                "donor": entry.donor_id,
                "offset": list(entry.offset),
                "degenerate": entry.degenerate,
            }
        )
    labels = labels_from_masks(masks, background.schema, background.shape)
    prov = AugProvenance(
        "anatomix",
        background.id,
        tuple(dict.fromkeys(donor_ids)),
        None,
        {"plan": plan_snapshot},
    )
    out_id = output_id or f"anatomix({background.id})"
    return Case(out_id, background.volume.with_data(acc), labels), prov


def _anatomix_replay(background: Case, prov: AugProvenance, accessor) -> Case:
    entries = {
        (background.id, int(r["label"])): PlanEntry(
            r["donor"], tuple(int(x) for x in r["offset"]), bool(r.get("degenerate"))
        )
        for r in prov.params["plan"]
    }
    case, _ = anatomix_apply(background, AnatoPlan(entries), accessor)
    return case


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

PAIRWISE_STRATEGIES = ("cutmix", "carvemix")
STRATEGIES = ("cutmix", "objectaug", "carvemix", "anatomix")


def replay(prov: AugProvenance, accessor) -> tuple[Case, np.ndarray]:
    """Regenerate an output from provenance; also return its artificial mask.

    The mask marks voxels whose intensities are not pure selections of
    operand voxels (inpainted or interpolated); it is identically empty
    for the three interpolation-free strategies.
    """
    background = accessor(prov.background_id)
    if prov.strategy == "cutmix":
        source = accessor(prov.source_ids[0])
        case = _cutmix_replay(background, source, prov)
    elif prov.strategy == "carvemix":
        source = accessor(prov.source_ids[0])
        case, _ = carvemix(background, source)
    elif prov.strategy == "objectaug":
        return _objectaug_replay(background, prov)
    elif prov.strategy == "anatomix":
        case = _anatomix_replay(background, prov, accessor)
    else:
        raise AugmentationError(f"unknown strategy {prov.strategy!r}")
    return case, np.zeros(background.shape, dtype=bool)
