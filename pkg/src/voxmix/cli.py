"""Command-line entry point.

Subcommands: index, phantom, augment, audit, evaluate, bench.  Every
subcommand prints its fully-resolved configuration before acting; progress
goes to stderr, machine-readable records to files, summary tables to
stdout.  Exit codes: 0 success, 1 audit violation under --strict, 2 usage
error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import backend_name
from .audit import audit_case, strategy_matrix
from .dataset_io import index_dataset, load_manifest, read_manifest_case
from .errors import VoxmixError
from .metrics import DiceTable, summary as dice_summary
from .phantoms import generate_phantom_dataset, small_phantom_spec, standard_phantom_spec
from .pipeline import (
    PipelineConfig,
    bench_strategies,
    default_workers,
    load_run_manifest,
    run,
)
from .strategies import STRATEGIES, AugProvenance

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _print_config(name: str, cfg: dict) -> None:
    print(f"# voxmix {__version__} [{backend_name()}] {name}")
    print(f"# config: {json.dumps(cfg, sort_keys=True)}")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------


def cmd_index(args) -> int:
    cfg = {"manifest": str(args.manifest), "json": str(args.json) if args.json else None}
    _print_config("index", cfg)
    index = index_dataset(args.manifest)
    print(f"cases: {len(index)}   organs: {len(index.schema)}")
    print(f"{'organ':>8} {'label':>5} {'present':>8} {'mean voxels':>12} {'mean mm3':>12}")
    for label in index.schema.labels:
        stats = list(index.organ_stats(label))
        present = [s for s in stats if s.present]
        mean_vox = np.mean([s.voxel_count for s in present]) if present else 0.0
        mean_mm3 = np.mean([s.physical_volume for s in present]) if present else 0.0
        print(
            f"{index.schema.name_of(label):>8} {label:>5} "
            f"{len(present):>8} {mean_vox:>12.1f} {mean_mm3:>12.1f}"
        )
    if args.json:
        doc = {
            "cases": [
                {"id": c.id, "shape": list(c.shape), "spacing": list(c.spacing)}
                for c in index.cases
            ],
            "stats": [
                {
                    "case": s.case_id,
                    "label": s.label,
                    "voxel_count": s.voxel_count,
                    "physical_volume": s.physical_volume,
                    "centroid": list(s.centroid) if s.centroid else None,
                    "present": s.present,
                }
                for s in index.stats.values()
            ],
        }
        Path(args.json).write_text(json.dumps(doc, indent=1))
        _progress(f"index written to {args.json}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    cfg = {
        "out": str(args.out),
        "cases": args.cases,
        "seed": args.seed,
        "preset": args.preset,
        "compress": args.compress,
    }
    _print_config("phantom", cfg)
    spec = (
        standard_phantom_spec(seed=args.seed)
        if args.preset == "standard"
        else small_phantom_spec(seed=args.seed)
    )
    manifest = generate_phantom_dataset(spec, args.cases, args.out, compress=args.compress)
    print(f"wrote {len(manifest.cases)} cases to {manifest.root}")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = PipelineConfig(
        manifest_path=args.manifest,
        out_dir=args.out,
        strategy=args.strategy,
        multiplier=args.multiplier,
        master_seed=args.seed,
        workers=args.workers,
        beta_params=tuple(args.beta),
        hole_dilation=args.hole_dilation,
        compress=args.compress,
    )
    _print_config("augment", config.to_dict())
    t0 = time.perf_counter()
    records = run(config)
    elapsed = time.perf_counter() - t0
    ok = [r for r in records if r["status"] == "ok"]
    millis = sorted(r["millis"] for r in ok if r["millis"] is not None)
    median = millis[len(millis) // 2] if millis else float("nan")
    print(
        f"outputs written: {len(ok)}   failures: {len(records) - len(ok)}   "
        f"median strategy millis: {median:.1f}   wall: {elapsed:.1f}s"
    )
    _progress(f"run manifest: {config.out_dir / 'run.jsonl'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = {
        "outputs": str(args.outputs),
        "reference": str(args.reference),
        "report": str(args.report) if args.report else None,
        "expected_components": args.expected_components,
        "connectivity": args.connectivity,
        "strict": args.strict,
    }
    _print_config("audit", cfg)
    reference = index_dataset(args.reference)
    ref_manifest = load_manifest(args.reference)
    cache: dict = {}

    def accessor(case_id: str):
        if case_id not in cache:
            cache[case_id] = read_manifest_case(ref_manifest, case_id)
        return cache[case_id]

    out_manifest = load_manifest(args.outputs)
    provenance: dict[str, AugProvenance] = {}
    try:
        _, records = load_run_manifest(Path(args.outputs))
        for r in records:
            if r.get("record") == "output" and r.get("status") == "ok":
                provenance[r["output_id"]] = AugProvenance(
                    r["strategy"], r["background"], tuple(r["sources"]),
                    r["seed"], r.get("params", {}),
                )
    except FileNotFoundError:
        _progress("no run manifest found; auditing without provenance (partial)")

    reports = []
    for mc in out_manifest.cases:
        case = read_manifest_case(out_manifest, mc.id)
        report = audit_case(
            case,
            provenance.get(mc.id),
            reference,
            expected_components=args.expected_components,
            accessor=accessor if mc.id in provenance else None,
            connectivity=args.connectivity,
        )
        reports.append(report)
        _progress(f"audited {mc.id}")

    if args.report:
        with open(args.report, "w") as fh:
            for r in reports:
                fh.write(json.dumps(r.to_dict()) + "\n")

    matrix = strategy_matrix(reports)
    print(f"{'cases audited':>24}: {len(reports)}")
    print(f"{'correct organ count':>24}: {'Yes' if matrix['correct_organ_count'] else 'No'}")
    print(
        f"{'correct organ locations':>24}: "
        f"{'Yes' if matrix['correct_organ_locations'] else 'No'}"
    )
    print(f"{'broken organs':>24}: {'Yes' if matrix['broken_organs'] else 'No'}")
    print(f"{'artificial voxels':>24}: {'Yes' if matrix['artificial_voxels'] else 'No'}")

    violated = (
        not matrix["correct_organ_count"]
        or not matrix["correct_organ_locations"]
        or matrix["broken_organs"]
        or matrix["artificial_voxels"]
    )
    if args.strict and violated:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = {
        "pred": str(args.pred),
        "ref": str(args.ref),
        "report": str(args.report) if args.report else None,
    }
    _print_config("evaluate", cfg)
    pred_manifest = load_manifest(args.pred)
    ref_manifest = load_manifest(args.ref)
    pred_ids = {c.id for c in pred_manifest.cases}
    ids = sorted(pred_ids & {c.id for c in ref_manifest.cases})
    if not ids:
        raise VoxmixError("prediction and reference manifests share no case ids")

    table = DiceTable()
    for cid in ids:
        pred = read_manifest_case(pred_manifest, cid)
        ref = read_manifest_case(ref_manifest, cid)
        table.add_sample(cid, pred.labels, ref.labels)
        _progress(f"evaluated {cid}")

    doc = dice_summary(table)
    if args.report:
        with open(args.report, "w") as fh:
            for e in table.entries:
                fh.write(json.dumps(e.to_dict()) + "\n")
            fh.write(json.dumps(doc) + "\n")
    print(f"samples: {len(ids)}   defined pairs: {doc['pairs']}")
    print(f"micro dice: {doc['micro']:.4f}")
    print(f"macro dice: {doc['macro']:.4f}")
    for label, val in doc["per_organ"].items():
        print(f"  organ {label}: {val:.4f}")
    return EXIT_OK


def _bench_kernels(size: int, reps: int) -> int:
    from ._kernels import numpy_impl

    impls = {"numpy": numpy_impl}
    try:
        from ._kernels import numba_impl

        impls["numba"] = numba_impl
    except ImportError:
        _progress("numba unavailable; benchmarking numpy only")

    rng = np.random.default_rng(0)
    vol = rng.normal(0, 1, (size, size, size)).astype(np.float32)
    mask = (rng.random((size, size, size)) < 0.5).astype(np.uint8)
    mat = np.linalg.inv(
        np.array([[0.95, 0.02, 0.0], [-0.02, 1.05, 0.01], [0.0, -0.01, 1.0]])
    )
    offset = np.array([1.3, -2.1, 0.7])

    hole = np.zeros((size, size, size), dtype=bool)
    c = size // 2
    hole[c - 4 : c + 4, c - 4 : c + 4, c - 4 : c + 4] = True
    from .inpaint import _neighbor_table

    hole_idx, nbrs = _neighbor_table(hole.shape, hole)

    print(f"{'kernel':<18} {'backend':<8} {'ms/op':>10}")
    for name, impl in impls.items():
        # untimed warm-up also triggers JIT compilation
        impl.affine_trilinear(vol, mat, offset, np.float32(0))
        impl.affine_nearest(mask, mat, offset, np.uint8(0))
        impl.jacobi_fill(vol.astype(np.float64).ravel(), hole_idx, nbrs, 10, 0.0)
        for kernel, call in (
            ("affine_trilinear", lambda: impl.affine_trilinear(vol, mat, offset, np.float32(0))),
            ("affine_nearest", lambda: impl.affine_nearest(mask, mat, offset, np.uint8(0))),
            (
                "jacobi_fill(50it)",
                lambda: impl.jacobi_fill(
                    vol.astype(np.float64).ravel(), hole_idx, nbrs, 50, 0.0
                ),
            ),
        ):
            t0 = time.perf_counter()
            for _ in range(reps):
                call()
            ms = (time.perf_counter() - t0) * 1e3 / reps
            print(f"{kernel:<18} {name:<8} {ms:>10.2f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = {
        "manifest": str(args.manifest) if args.manifest else None,
        "strategies": args.strategies,
        "jobs": args.jobs,
        "seed": args.seed,
        "kernels": args.kernels,
        "size": args.size,
        "reps": args.reps,
    }
    _print_config("bench", cfg)
    if args.kernels:
        return _bench_kernels(args.size, args.reps)
    if not args.manifest:
        raise VoxmixError("bench needs --manifest unless --kernels is set")
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise VoxmixError(f"unknown strategy {s!r}; pick from {STRATEGIES}")
    results = bench_strategies(args.manifest, strategies, args.jobs, args.seed)
    print(f"{'strategy':<12} {'n':>4} {'mean ms':>10} {'median ms':>10} {'p95 ms':>10}")
    for s in strategies:
        r = results[s]
        print(
            f"{s:<12} {r['n']:>4} {r['mean_ms']:>10.1f} "
            f"{r['median_ms']:>10.1f} {r['p95_ms']:>10.1f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser(extra_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxmix",
        description="volumetric multi-organ augmentation engine",
        epilog="--config FILE loads a JSON mapping of flag defaults; "
               "explicit flags always win.",
    )
    parser.add_argument("--version", action="version", version=f"voxmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    subparsers = []

    def _register(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        subparsers.append(p)
        return p

    p = _register(sub.add_parser("index", help="index a dataset and print organ statistics"))
    p.add_argument("--manifest", required=True, help="dataset manifest path or directory")
    p.add_argument("--json", default=None, help="write the full index as JSON")
    p.set_defaults(func=cmd_index)

    p = _register(sub.add_parser("phantom", help="generate a synthetic phantom dataset"))
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=20)
    p.add_argument("--preset", choices=["standard", "small"], default="standard")
    p.add_argument("--compress", action="store_true", help="write .nii.gz instead of .nii")
    p.set_defaults(func=cmd_phantom)

    p = _register(sub.add_parser("augment", help="run a batch augmentation"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", required=True, choices=list(STRATEGIES))
    p.add_argument("--multiplier", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--beta", type=float, nargs=2, default=[0.5, 0.5],
                   help="Beta distribution parameters for box sampling")
    p.add_argument("--hole-dilation", type=int, default=1)
    p.add_argument("--compress", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = _register(sub.add_parser("audit", help="audit augmented outputs against the original set"))
    p.add_argument("--outputs", required=True, help="augmentation output directory")
    p.add_argument("--reference", required=True, help="original dataset manifest")
    p.add_argument("--report", default=None, help="write per-case reports as JSONL")
    p.add_argument("--expected-components", type=int, default=1)
    p.add_argument("--connectivity", type=int, choices=[6, 26], default=6)
    p.add_argument("--strict", action="store_true",
                   help="exit 1 when any audited property is violated")
    p.set_defaults(func=cmd_audit)

    p = _register(sub.add_parser("evaluate", help="dice evaluation between two labeled datasets"))
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = _register(sub.add_parser("bench", help="benchmark strategies or kernels"))
    p.add_argument("--manifest", default=None)
    p.add_argument("--strategies", default="cutmix,carvemix,anatomix,objectaug")
    p.add_argument("--jobs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernels", action="store_true",
                   help="compare numba and numpy kernel backends instead")
    p.add_argument("--size", type=int, default=64, help="kernel benchmark grid size")
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    if extra_defaults:
        # applied after add_argument so they rewrite the argument defaults
        for sp in subparsers:
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in extra_defaults.items() if k in known})
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    extra_defaults = None
    if "--config" in argv:
        at = argv.index("--config")
        if at + 1 >= len(argv):
            print("error: --config needs a file argument", file=sys.stderr)
            return EXIT_USAGE
        try:
            extra_defaults = json.loads(Path(argv[at + 1]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot load config file: {exc}", file=sys.stderr)
            return EXIT_USAGE
        del argv[at : at + 2]

    parser = build_parser(extra_defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VoxmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
