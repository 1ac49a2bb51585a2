"""Batch augmentation runs: planning, parallel execution, manifests, timing.

A run plans ``multiplier x N_d`` independent jobs (backgrounds cycle
round-robin over the dataset, partners are drawn uniformly from
shape-compatible cases), derives one RNG stream per output from the master
seed, and executes jobs across worker processes.  Outputs are byte-stable
under any worker count because every job depends only on the original
dataset and its own derived seed.  Wall-clock per job is measured around
the strategy call only, with file I/O and donor loading outside the timed
region.
"""
from __future__ import annotations

import json
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__ as _engine_version
from .dataset_io import (
    DatasetManifest,
    ManifestCase,
    index_dataset,
    load_manifest,
    read_manifest_case,
    save_manifest,
    write_case,
)
from .errors import PipelineError, PlanningError
from .model import Case, DatasetIndex
from .seeding import derive_seed
from .strategies import (
    PAIRWISE_STRATEGIES,
    STRATEGIES,
    AnatoPlan,
    anatomix_apply,
    anatomix_plan,
    carvemix,
    cutmix,
    objectaug,
)

RUN_MANIFEST_NAME = "run.jsonl"


@dataclass(frozen=True)
class PipelineConfig:
    manifest_path: Path
    out_dir: Path
    strategy: str
    multiplier: int
    master_seed: int
    workers: int = 1
    beta_params: tuple[float, float] = (0.5, 0.5)
    hole_dilation: int = 1
    compress: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanningError(f"unknown strategy {self.strategy!r}; pick from {STRATEGIES}")
        if self.multiplier < 1:
            raise PlanningError("multiplier must be >= 1")
        if self.workers < 1:
            raise PlanningError("worker count must be >= 1")
        object.__setattr__(self, "manifest_path", Path(self.manifest_path))
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest_path),
            "out_dir": str(self.out_dir),
            "strategy": self.strategy,
            "multiplier": self.multiplier,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "beta_params": list(self.beta_params),
            "hole_dilation": self.hole_dilation,
            "compress": self.compress,
        }


@dataclass(frozen=True)
class AugJob:
    index: int
    output_id: str
    background_id: str
    source_id: str | None
    seed: int


def plan_outputs(index: DatasetIndex, config: PipelineConfig) -> list[AugJob]:
    """Plan exactly ``multiplier x N_d`` jobs, deterministic in the config.

    Background cases cycle round-robin so each original serves as
    background exactly ``multiplier`` times; pairwise strategies draw the
    source uniformly from equal-shape partners excluding the background.
    """
    ids = list(index.case_ids)
    n = len(ids)
    pairwise = config.strategy in PAIRWISE_STRATEGIES
    compatible: dict[str, list[str]] = {}
    if pairwise:
        for entry in index.cases:
            partners = [
                other.id
                for other in index.cases
                if other.id != entry.id and other.shape == entry.shape
            ]
            if not partners:
                raise PlanningError(
                    f"strategy {config.strategy!r} needs pairs but case "
                    f"{entry.id!r} has no shape-compatible partner"
                )
            compatible[entry.id] = partners

    jobs = []
    for k in range(config.multiplier * n):
        bg = ids[k % n]
        src = None
        if pairwise:
            partners = compatible[bg]
            pick = np.random.default_rng(
                derive_seed(config.master_seed, k, "pair")
            ).integers(0, len(partners))
            src = partners[int(pick)]
        jobs.append(
            AugJob(
                index=k,
                output_id=f"aug{k:05d}_{config.strategy}_{bg}",
                background_id=bg,
                source_id=src,
                seed=derive_seed(config.master_seed, k, "strategy"),
            )
        )
    taken = set(ids)
    for job in jobs:
        if job.output_id in taken:
            raise PlanningError(
                f"output id {job.output_id} collides with an original case id"
            )
    return jobs


# -- worker side -------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(cfg: dict, plan_doc: dict | None) -> None:
    _WORKER["cfg"] = cfg
    _WORKER["manifest"] = load_manifest(cfg["manifest"])
    _WORKER["plan"] = AnatoPlan.from_dict(plan_doc) if plan_doc is not None else None
    _WORKER["cache"] = {}


def _get_case(case_id: str) -> Case:
    cache = _WORKER["cache"]
    if case_id not in cache:
        cache[case_id] = read_manifest_case(_WORKER["manifest"], case_id)
    return cache[case_id]


def _execute_job(job: AugJob) -> dict:
    cfg = _WORKER["cfg"]
    strategy = cfg["strategy"]
    record = {
        "record": "output",
        "output_id": job.output_id,
        "strategy": strategy,
        "background": job.background_id,
        "sources": [job.source_id] if job.source_id else [],
        "seed": job.seed,
        "millis": None,
        "status": "ok",
    }
    try:
        background = _get_case(job.background_id)
        source = _get_case(job.source_id) if job.source_id else None
        plan: AnatoPlan | None = _WORKER["plan"]
        if strategy == "anatomix":
            for entry in plan.for_case(job.background_id).values():
                if entry.donor_id != job.background_id:
                    _get_case(entry.donor_id)  # preload; donor I/O stays untimed

        rng = np.random.default_rng(job.seed)
        t0 = time.perf_counter()
        if strategy == "cutmix":
            case, prov = cutmix(
                background, source, rng,
                beta_params=tuple(cfg["beta_params"]), output_id=job.output_id,
            )
        elif strategy == "carvemix":
            case, prov = carvemix(background, source, output_id=job.output_id)
        elif strategy == "objectaug":
            case, prov = objectaug(
                background, rng=rng,
                hole_dilation=int(cfg["hole_dilation"]), output_id=job.output_id,
            )
        else:
            case, prov = anatomix_apply(
                background, plan, _get_case, output_id=job.output_id
            )
        record["millis"] = (time.perf_counter() - t0) * 1e3

        suffix = ".nii.gz" if cfg["compress"] else ".nii"
        out_dir = Path(cfg["out_dir"])
        image_paths = [
            out_dir / f"{job.output_id}_im{ch}{suffix}"
            for ch in range(case.volume.channels)
        ]
        label_path = out_dir / f"{job.output_id}_seg{suffix}"
        write_case(case, image_paths, label_path)
        record["images"] = [p.name for p in image_paths]
        record["labels"] = label_path.name
        record["sources"] = list(prov.source_ids)
        record["params"] = prov.params
    except Exception as exc:  # marker for the manifest; the run aborts on it
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def run(config: PipelineConfig) -> list[dict]:
    """Execute a full augmentation run; returns the output records.

    Writes every output case, a line-delimited run manifest and a dataset
    manifest for the augmented set.  Any failed job aborts the run after
    the manifest (including the failure marker) is persisted.
    """
    index = index_dataset(config.manifest_path)
    plan = anatomix_plan(index) if config.strategy == "anatomix" else None
    jobs = plan_outputs(index, config)

    config.out_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict()
    plan_doc = plan.to_dict() if plan is not None else None

    records: list[dict] = []
    if config.workers == 1:
        _worker_init(cfg, plan_doc)
        for job in jobs:
            rec = _execute_job(job)
            records.append(rec)
            if rec["status"] == "failed":
                break
    else:
        # fork keeps worker startup cheap and sidesteps __main__ re-import;
        # falls back to spawn where fork is unavailable
        methods = multiprocessing.get_all_start_methods()
        ctx = get_context("fork" if "fork" in methods else "spawn")
        with ProcessPoolExecutor(
            max_workers=config.workers,
            mp_context=ctx,
            initializer=_worker_init,
            initargs=(cfg, plan_doc),
        ) as pool:
            futures = [pool.submit(_execute_job, job) for job in jobs]
            for fut in as_completed(futures):
                rec = fut.result()
                records.append(rec)
                if rec["status"] == "failed":
                    for other in futures:
                        other.cancel()
                    break

    records.sort(key=lambda r: r["output_id"])
    header = {
        "record": "header",
        "engine_version": _engine_version,
        "config": cfg,
        "n_jobs": len(jobs),
        "anatomix_plan": plan_doc,
    }
    manifest_lines = [json.dumps(header)] + [json.dumps(r) for r in records]
    (config.out_dir / RUN_MANIFEST_NAME).write_text("\n".join(manifest_lines) + "\n")

    ok = [r for r in records if r["status"] == "ok"]
    out_manifest = DatasetManifest(
        config.out_dir,
        index.schema,
        tuple(
            ManifestCase(r["output_id"], tuple(r["images"]), r["labels"]) for r in ok
        ),
    )
    save_manifest(out_manifest)

    failed = [r for r in records if r["status"] == "failed"]
    if failed:
        first = failed[0]
        raise PipelineError(
            f"job {first['output_id']} failed: {first['error']} "
            f"({len(failed)}/{len(records)} jobs failed; partial outputs retained)"
        )
    return records


def load_run_manifest(out_dir) -> tuple[dict, list[dict]]:
    lines = (Path(out_dir) / RUN_MANIFEST_NAME).read_text().splitlines()
    docs = [json.loads(line) for line in lines if line.strip()]
    header = docs[0]
    return header, [d for d in docs[1:]]


def default_workers() -> int:
    env = os.environ.get("VOXMIX_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def bench_strategies(
    manifest_path, strategies, n_jobs: int, master_seed: int,
    hole_dilation: int = 1,
) -> dict[str, dict]:
    """Time each strategy over the same background/source job list.

    Runs in-process with preloaded cases and no output writing, so the
    figures isolate pure strategy cost per output image.
    """
    index = index_dataset(manifest_path)
    manifest = load_manifest(manifest_path)
    cache: dict[str, Case] = {}

    def get(case_id: str) -> Case:
        if case_id not in cache:
            cache[case_id] = read_manifest_case(manifest, case_id)
        return cache[case_id]

    results: dict[str, dict] = {}
    for strategy in strategies:
        cfg = PipelineConfig(
            manifest_path=manifest_path,
            out_dir=Path("."),
            strategy=strategy,
            multiplier=max(1, -(-n_jobs // len(index))),
            master_seed=master_seed,
            hole_dilation=hole_dilation,
        )
        jobs = plan_outputs(index, cfg)[:n_jobs]
        plan = anatomix_plan(index) if strategy == "anatomix" else None
        millis = []
        for job in jobs:
            background = get(job.background_id)
            source = get(job.source_id) if job.source_id else None
            if strategy == "anatomix":
                for entry in plan.for_case(job.background_id).values():
                    get(entry.donor_id)
            rng = np.random.default_rng(job.seed)
            t0 = time.perf_counter()
            if strategy == "cutmix":
                cutmix(background, source, rng, output_id=job.output_id)
            elif strategy == "carvemix":
                carvemix(background, source, output_id=job.output_id)
            elif strategy == "objectaug":
                objectaug(background, rng=rng, hole_dilation=hole_dilation,
                          output_id=job.output_id)
            else:
                anatomix_apply(background, plan, get, output_id=job.output_id)
            millis.append((time.perf_counter() - t0) * 1e3)
        arr = np.array(millis)
        results[strategy] = {
            "n": len(arr),
            "mean_ms": float(arr.mean()),
            "median_ms": float(np.median(arr)),
            "p95_ms": float(np.percentile(arr, 95)),
        }
    return results
