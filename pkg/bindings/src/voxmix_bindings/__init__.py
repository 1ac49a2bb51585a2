"""In-process bindings for the voxmix augmentation engine.

Training code hands volumes over as plain numpy arrays (the host's
n-dimensional buffer protocol); the bindings wrap them into engine cases
without copying whenever dtype and layout already fit, run a strategy or a
whole pipeline, and hand the result arrays back to the caller.

The binding path is byte-equivalent to the file/CLI path: feeding the same
inputs and the same derived seed through :func:`bound_augment` produces
exactly the voxels a pipeline run writes to disk.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

import voxmix as vx
from voxmix.pipeline import PipelineConfig, run as _pipeline_run
from voxmix.strategies import PAIRWISE_STRATEGIES, STRATEGIES, AnatoPlan, PlanEntry

__version__ = vx.__version__

__all__ = ["BoundCase", "bound_augment", "bound_pipeline_run", "__version__"]


def _as_view(arr, dtype, copy: bool, what: str) -> np.ndarray:
    """Zero-copy view when dtype/layout permit, else an explicit copy."""
    out = np.asarray(arr)
    needs_convert = out.dtype != np.dtype(dtype) or not out.flags.c_contiguous
    if needs_convert:
        if not copy:
            raise ValueError(
                f"{what}: dtype {out.dtype} / layout requires a conversion; "
                f"pass copy=True to allow it"
            )
        out = np.ascontiguousarray(out, dtype=dtype)
    return out


@dataclass
class BoundCase:
    """Engine case over caller-owned arrays.

    ``image`` is (channels, D, W, H) float32 (a bare 3-D array is treated
    as single-channel), ``labels`` is (D, W, H) integer.  With
    ``copy=False`` (default) the arrays are wrapped as views; inputs whose
    dtype or layout would force a silent copy are rejected.
    """

    image: np.ndarray
    labels: np.ndarray
    spacing: tuple[float, float, float]
    schema: tuple[tuple[int, str], ...]
    copy: bool = False

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim == 3:
            img = img[None]
        self.image = _as_view(img, np.float32, self.copy, "image")
        lab = np.asarray(self.labels)
        self.labels = _as_view(lab, lab.dtype, self.copy, "labels")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError(f"labels must be integer, got {self.labels.dtype}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if isinstance(self.schema, Mapping):
            self.schema = tuple((int(k), str(v)) for k, v in sorted(self.schema.items()))
        else:
            self.schema = tuple((int(l), str(n)) for l, n in self.schema)

    def to_engine(self, case_id: str = "bound") -> vx.Case:
        volume = vx.Volume(self.image, self.spacing)
        return vx.Case(case_id, volume, vx.LabelMap(self.labels, vx.LabelSchema(self.schema)))

    @classmethod
    def from_engine(cls, case: vx.Case) -> "BoundCase":
        return cls(
            case.volume.data,
            case.labels.data,
            case.volume.spacing,
            case.schema.entries,
        )


def _caller_owned(arr: np.ndarray) -> np.ndarray:
    """Hand an engine output array to the caller as a writable buffer."""
    if arr.flags.owndata:
        arr.setflags(write=True)
        return arr
    return arr.copy()


def _plan_from_params(background_id: str, params: dict) -> AnatoPlan:
    entries = {}
    for rec in params["plan"]:
        entries[(background_id, int(rec["label"]))] = PlanEntry(
            str(rec["donor"]),
            tuple(int(x) for x in rec["offset"]),
            bool(rec.get("degenerate", False)),
        )
    return AnatoPlan(entries)


def bound_augment(
    background: BoundCase,
    source: BoundCase | None,
    strategy: str,
    params: dict | None = None,
    seed: int = 0,
) -> tuple[BoundCase, dict]:
    """Run one augmentation strategy on in-memory cases.

    ``source`` is required for the pairwise strategies (box mixing and
    organ carving) and rejected otherwise.  Organ transplantation takes its
    plan and donor cases through ``params`` as ``{"plan": [...], "donors":
    {case_id: BoundCase}}``.  The derived seed drives the same RNG stream
    the batch pipeline uses, so results are byte-identical to CLI output
    files for equal inputs and seed.
    """
    params = dict(params or {})
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; pick from {STRATEGIES}")
    pairwise = strategy in PAIRWISE_STRATEGIES
    if pairwise and source is None:
        raise ValueError(f"strategy {strategy!r} needs a source case")
    if not pairwise and source is not None:
        raise ValueError(f"strategy {strategy!r} does not take a source case")

    bg_id = str(params.pop("background_id", "background"))
    src_id = str(params.pop("source_id", "source"))
    bg = background.to_engine(bg_id)
    rng = np.random.default_rng(seed)

    if strategy == "cutmix":
        beta = tuple(params.get("beta", (0.5, 0.5)))
        case, prov = vx.cutmix(bg, source.to_engine(src_id), rng, beta_params=beta)
    elif strategy == "carvemix":
        case, prov = vx.carvemix(bg, source.to_engine(src_id))
    elif strategy == "objectaug":
        case, prov = vx.objectaug(
            bg, rng=rng, hole_dilation=int(params.get("hole_dilation", 1)),
        )
    else:
        donors = {
            str(cid): bc.to_engine(str(cid))
            for cid, bc in dict(params.get("donors", {})).items()
        }
        donors[bg_id] = bg
        plan = _plan_from_params(bg_id, params)
        case, prov = vx.anatomix_apply(bg, plan, donors.__getitem__)

    out = BoundCase(
        _caller_owned(np.asarray(case.volume.data)),
        _caller_owned(np.asarray(case.labels.data)),
        case.volume.spacing,
        case.schema.entries,
    )
    record = prov.to_dict()
    record["seed"] = seed
    return out, record


def bound_pipeline_run(config: Mapping) -> list[dict]:
    """Run a batch augmentation and return its manifest records in memory.

    ``config`` mirrors the pipeline configuration: ``manifest`` (dataset
    path) or ``cases`` (mapping id -> BoundCase, materialized under
    ``out_dir``), plus ``out_dir``, ``strategy``, ``multiplier``, ``seed``,
    ``workers``, ``compress``, ``hole_dilation``, ``beta``.
    """
    cfg = dict(config)
    out_dir = Path(cfg["out_dir"])
    manifest = cfg.get("manifest")
    if manifest is None:
        cases = cfg.get("cases")
        if not cases:
            raise ValueError("config needs either 'manifest' or in-memory 'cases'")
        input_dir = out_dir / "inputs"
        input_dir.mkdir(parents=True, exist_ok=True)
        records = []
        schema = None
        for cid in sorted(cases):
            case = cases[cid].to_engine(str(cid))
            schema = case.schema
            image_paths = [input_dir / f"{cid}_im{ch}.nii" for ch in range(case.volume.channels)]
            label_path = input_dir / f"{cid}_seg.nii"
            vx.write_case(case, image_paths, label_path)
            records.append(
                vx.ManifestCase(str(cid), tuple(p.name for p in image_paths),
                                label_path.name)
            )
        vx.save_manifest(vx.DatasetManifest(input_dir, schema, tuple(records)))
        manifest = input_dir

    pipeline_config = PipelineConfig(
        manifest_path=manifest,
        out_dir=out_dir,
        strategy=str(cfg["strategy"]),
        multiplier=int(cfg.get("multiplier", 1)),
        master_seed=int(cfg.get("seed", 0)),
        workers=int(cfg.get("workers", 1)),
        beta_params=tuple(cfg.get("beta", (0.5, 0.5))),
        hole_dilation=int(cfg.get("hole_dilation", 1)),
        compress=bool(cfg.get("compress", False)),
    )
    return _pipeline_run(pipeline_config)
