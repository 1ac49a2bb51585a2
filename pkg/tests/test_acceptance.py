"""Release acceptance suite.

One test per criterion; each prints a PASS/FAIL line (run with ``-s`` to
see them live) and enforces its stated tolerance and runtime budget.
"""
import hashlib
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

import voxmix as vx
from voxmix.audit import audit_case, strategy_matrix
from voxmix.metrics import DiceEntry, DiceTable, aggregate, dice
from voxmix.phantoms import rasterize_ellipsoid
from voxmix.pipeline import PipelineConfig, bench_strategies, plan_outputs, run

from conftest import CaseCache, make_case


@contextmanager
def criterion(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name} ({time.perf_counter() - t0:.1f}s)")


# ---------------------------------------------------------------------------
# 1. fusion oracle
# ---------------------------------------------------------------------------

def test_fusion_matches_bruteforce_on_1000_grids():
    with criterion("fusion equals brute-force voxel loop on 1000 random grids"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            shape = tuple(int(x) for x in rng.integers(1, 6, 3))
            m = rng.random(shape) < rng.random()
            if trial % 3 == 2:  # mask-kind fusion
                bg = (rng.random(shape) < 0.5).astype(np.float32)
                src = (rng.random(shape) < 0.5).astype(np.float32)
            else:
                bg = rng.normal(0, 250, shape).astype(np.float32)
                src = rng.normal(0, 250, shape).astype(np.float32)
            expect = np.empty_like(bg)
            for d in range(shape[0]):
                for w in range(shape[1]):
                    for h in range(shape[2]):
                        mv = 1.0 if m[d, w, h] else 0.0
                        expect[d, w, h] = src[d, w, h] * mv + bg[d, w, h] * (1.0 - mv)
            got = vx.fuse(bg, src, m)
            assert np.array_equal(got, expect), f"trial {trial}"
        assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------------------
# 2. box statistics
# ---------------------------------------------------------------------------

def test_cutmix_box_volume_fraction_statistics():
    with criterion("mean pre-clip box volume fraction in [0.48, 0.52] over 10k draws"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        fracs = np.array([
            vx.sample_cutmix_box((64, 64, 64), rng).sampled_volume_fraction
            for _ in range(10_000)
        ])
        mean = float(fracs.mean())
        assert 0.48 <= mean <= 0.52, mean
        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------------------
# 3. Table-1 style verdict matrix
# ---------------------------------------------------------------------------

def _permuted_source(spec, swap=(1, 6), seed=99):
    """Phantom-like case with two organ sites exchanged."""
    rng = np.random.default_rng(seed)
    shape = spec.shape
    grid = np.zeros(shape, np.uint8)
    img = spec.background_mean + rng.normal(0, spec.background_sigma, shape)
    sites = [(o.center_frac[1] * (shape[1] - 1), o.center_frac[2] * (shape[2] - 1))
             for o in spec.organs]
    sites[swap[0]], sites[swap[1]] = sites[swap[1]], sites[swap[0]]
    for organ, (w, h) in zip(spec.organs, sites):
        m = rasterize_ellipsoid(shape, (48.0, w, h), organ.radii_vox)
        assert not (grid[m] != 0).any()
        grid[m] = organ.label
        img[m] = organ.intensity_mean + rng.normal(0, organ.intensity_sigma, int(m.sum()))
    return vx.Case("adv_perm", vx.Volume(img.astype(np.float32)[None], spec.spacing),
                   vx.LabelMap(grid, spec.schema()))


def _blob_source(spec, bg_case, index, victim=8, carrier=9, seed=123):
    """Source whose only organ is one blob covering the background's victim
    organ and overlapping its carrier organ."""
    c_victim = np.array(index.stat(bg_case.id, victim).centroid)
    c_carrier = np.array(index.stat(bg_case.id, carrier).centroid)
    mid = (c_victim + c_carrier) / 2
    semi = np.abs(c_carrier - c_victim) / 2 + 11.0
    blob = rasterize_ellipsoid(bg_case.shape, tuple(mid), tuple(semi))

    m_victim = bg_case.labels.data == victim
    m_carrier = bg_case.labels.data == carrier
    others = (bg_case.labels.data > 0) & ~m_victim & ~m_carrier
    six = ndimage.generate_binary_structure(3, 1)
    assert (blob | ~m_victim).all(), "blob must swallow the victim organ"
    assert not (blob & others).any(), "blob must not touch other organs"
    assert ndimage.label(blob | m_carrier, structure=six)[1] == 1

    rng = np.random.default_rng(seed)
    grid = np.zeros(bg_case.shape, np.uint8)
    grid[blob] = carrier
    img = spec.background_mean + rng.normal(0, spec.background_sigma, bg_case.shape)
    img[blob] = 60.0 + 110.0 * (carrier - 1) + rng.normal(0, 12.0, int(blob.sum()))
    return vx.Case("adv_blob", vx.Volume(img.astype(np.float32)[None], spec.spacing),
                   vx.LabelMap(grid, spec.schema()))


def test_verdict_matrix_reproduced(standard_suite, standard_index):
    spec, manifest = standard_suite
    index = standard_index
    with criterion("audit reproduces the four-strategy verdict matrix exactly"):
        t0 = time.perf_counter()
        cases = CaseCache(manifest)

        # --- box mixing: bisection + organ duplication + natural draws
        d_cent = {cid: index.stat(cid, 1).centroid[0] for cid in index.case_ids}
        bg_hi = cases(max(d_cent, key=d_cent.get))
        src_lo = cases(min(d_cent, key=d_cent.get))
        assert d_cent[bg_hi.id] - d_cent[src_lo.id] >= 6
        box_bisect = vx.BoxMask((50, 8, 8), (54, 30, 30), bg_hi.shape, (4, 22, 22))
        assert not (src_lo.labels.data[50:54, 8:30, 8:30] == 1).any()
        out_bisect, prov_bisect = vx.cutmix(bg_hi, src_lo, box=box_bisect)

        adv_perm = _permuted_source(spec)
        cases.add(adv_perm)
        box_perm = vx.BoxMask((36, 66, 6), (60, 90, 30), adv_perm.shape, (24, 24, 24))
        out_perm, prov_perm = vx.cutmix(cases(index.case_ids[3]), adv_perm, box=box_perm)

        cutmix_reports = [
            audit_case(out_bisect, prov_bisect, index, accessor=cases),
            audit_case(out_perm, prov_perm, index, accessor=cases),
        ]
        for i in range(8):
            bg = cases(index.case_ids[i])
            src = cases(index.case_ids[(i + 7) % 20])
            out, prov = vx.cutmix(bg, src, np.random.default_rng(500 + i))
            cutmix_reports.append(audit_case(out, prov, index, accessor=cases))

        # --- organ carving: blob source swallowing one organ
        bg5 = cases(index.case_ids[5])
        adv_blob = _blob_source(spec, bg5, index)
        cases.add(adv_blob)
        out_blob, prov_blob = vx.carvemix(bg5, adv_blob)
        carvemix_reports = [audit_case(out_blob, prov_blob, index, accessor=cases)]

        # --- object-level augmentation and transplantation: natural draws
        objectaug_reports = []
        for i in range(10):
            bg = cases(index.case_ids[i])
            out, prov = vx.objectaug(bg, rng=np.random.default_rng(1000 + i))
            objectaug_reports.append(audit_case(out, prov, index, accessor=cases))

        plan = vx.anatomix_plan(index)
        anatomix_reports = []
        for i in range(10):
            bg = cases(index.case_ids[i])
            out, prov = vx.anatomix_apply(bg, plan, cases)
            anatomix_reports.append(audit_case(out, prov, index, accessor=cases))

        matrix = {
            "cutmix": strategy_matrix(cutmix_reports),
            "objectaug": strategy_matrix(objectaug_reports),
            "carvemix": strategy_matrix(carvemix_reports),
            "anatomix": strategy_matrix(anatomix_reports),
        }
        expected = {
            "cutmix": dict(correct_organ_count=False, correct_organ_locations=False,
                           broken_organs=True, artificial_voxels=False),
            "objectaug": dict(correct_organ_count=True, correct_organ_locations=True,
                              broken_organs=False, artificial_voxels=True),
            "carvemix": dict(correct_organ_count=False, correct_organ_locations=False,
                             broken_organs=False, artificial_voxels=False),
            "anatomix": dict(correct_organ_count=True, correct_organ_locations=True,
                             broken_organs=False, artificial_voxels=False),
        }
        assert matrix == expected, matrix
        assert time.perf_counter() - t0 < 300.0


# ---------------------------------------------------------------------------
# 4. strategy identities
# ---------------------------------------------------------------------------

def test_strategy_identities_bit_exact(small_suite, tmp_path):
    _, manifest = small_suite
    with criterion("identity inputs reproduce the background bit-exactly"):
        cases = CaseCache(manifest)
        bg = cases("case_0000")
        src = cases("case_0001")

        out, _ = vx.cutmix(bg, src, box=vx.BoxMask.empty(bg.shape))
        assert np.array_equal(out.volume.data, bg.volume.data)
        assert np.array_equal(out.labels.data, bg.labels.data)

        empty = make_case("empty", np.zeros(bg.shape, np.uint8), bg.schema,
                          np.random.default_rng(0))
        out, _ = vx.carvemix(bg, empty)
        assert np.array_equal(out.volume.data, bg.volume.data)
        assert np.array_equal(out.labels.data, bg.labels.data)

        ident = {lab: vx.AffineParams() for lab in bg.schema.labels}
        out, _ = vx.objectaug(bg, transforms=ident)
        assert np.array_equal(out.volume.data, bg.volume.data)
        assert np.array_equal(out.labels.data, bg.labels.data)

        solo_dir = tmp_path / "solo"
        vx.generate_phantom_dataset(vx.small_phantom_spec(), 1, solo_dir)
        solo_index = vx.index_dataset(solo_dir)
        solo = vx.read_manifest_case(vx.load_manifest(solo_dir), "case_0000")
        plan = vx.anatomix_plan(solo_index)
        out, _ = vx.anatomix_apply(solo, plan, lambda cid: solo)
        assert np.array_equal(out.volume.data, solo.volume.data)
        assert np.array_equal(out.labels.data, solo.labels.data)


# ---------------------------------------------------------------------------
# 5. transplant planning optimality
# ---------------------------------------------------------------------------

def test_plan_matches_exhaustive_argmin(standard_index, standard_suite):
    from voxmix.model import CaseEntry, DatasetIndex, OrganStats

    with criterion("transplant planning equals exhaustive argmin; centroids align"):
        rng = np.random.default_rng(7)
        schema = vx.LabelSchema(((1, "a"), (2, "b"), (3, "c")))
        for trial in range(20):
            n = int(rng.integers(2, 11))
            cases, stats = [], {}
            for i in range(n):
                cid = f"c{i:02d}"
                cases.append(CaseEntry(cid, (), f"{cid}.nii", (32, 32, 32), (1.0, 1.0, 1.0)))
                for lab in schema.labels:
                    if rng.random() < 0.15:
                        stats[(cid, lab)] = OrganStats(cid, lab, 0, 0.0, None, False)
                    else:
                        vol = float(rng.integers(50, 200))  # narrow range forces ties
                        cent = tuple(float(x) for x in rng.uniform(5, 25, 3))
                        stats[(cid, lab)] = OrganStats(cid, lab, int(vol), vol, cent, True)
            index = DatasetIndex(Path("."), schema, tuple(cases), stats)
            plan = vx.anatomix_plan(index)
            for lab in schema.labels:
                present = [s for s in index.organ_stats(lab) if s.present]
                for stat in present:
                    got = plan.entries[(stat.case_id, lab)]
                    others = [s for s in present if s.case_id != stat.case_id]
                    if not others:
                        assert got.degenerate
                        continue
                    best = min(others, key=lambda s: (
                        abs(s.physical_volume - stat.physical_volume), s.case_id))
                    assert got.donor_id == best.case_id
                    expect_off = tuple(int(np.rint(a - b)) for a, b in
                                       zip(stat.centroid, best.centroid))
                    assert got.offset == expect_off

        # transplanted organ centroids land within a voxel of the recipient
        _, manifest = standard_suite
        cases = CaseCache(manifest)
        plan = vx.anatomix_plan(standard_index)
        for cid in standard_index.case_ids[:4]:
            bg = cases(cid)
            _, prov = vx.anatomix_apply(bg, plan, cases)
            for rec in prov.params["plan"]:
                donor = cases(rec["donor"])
                shifted = vx.integer_shift(
                    donor.labels.data == rec["label"], rec["offset"], fill=False)
                got = np.array(vx.mask_centroid(shifted))
                want = np.array(standard_index.stat(cid, rec["label"]).centroid)
                assert np.all(np.abs(got - want) <= 1.0)


# ---------------------------------------------------------------------------
# 6. pipeline protocol
# ---------------------------------------------------------------------------

def test_pipeline_multiplier_protocol(small_suite, tmp_path):
    _, manifest = small_suite
    with criterion("multipliers 10/25/50 yield 200/500/1000 collision-free outputs"):
        t0 = time.perf_counter()
        original = set(vx.index_dataset(manifest.root).case_ids)
        for multiplier, expected in ((10, 200), (25, 500), (50, 1000)):
            out_dir = tmp_path / f"x{multiplier}"
            records = run(PipelineConfig(
                manifest.root, out_dir, "cutmix", multiplier, master_seed=multiplier,
                workers=2,
            ))
            assert len(records) == expected
            assert all(r["status"] == "ok" for r in records)
            ids = {r["output_id"] for r in records}
            assert len(ids) == expected
            assert not (ids & original)
            n_label_files = len(list(out_dir.glob("*_seg.nii")))
            assert n_label_files == expected
            shutil.rmtree(out_dir)
        assert time.perf_counter() - t0 < 600.0


def test_pipeline_worker_count_byte_equality(small_suite, tmp_path):
    _, manifest = small_suite
    with criterion("outputs byte-identical for worker counts 1 and 4"):
        t0 = time.perf_counter()

        def digest(out_dir):
            h = hashlib.sha256()
            for p in sorted(Path(out_dir).iterdir()):
                if p.name == "run.jsonl":
                    continue
                h.update(p.name.encode())
                h.update(p.read_bytes())
            return h.hexdigest()

        d1 = tmp_path / "w1"
        d4 = tmp_path / "w4"
        run(PipelineConfig(manifest.root, d1, "cutmix", 10, master_seed=99, workers=1))
        run(PipelineConfig(manifest.root, d4, "cutmix", 10, master_seed=99, workers=4))
        assert digest(d1) == digest(d4)
        shutil.rmtree(d1)
        shutil.rmtree(d4)
        assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------------------
# 7. timing ordering
# ---------------------------------------------------------------------------

def test_strategy_timing_ordering(standard_suite):
    _, manifest = standard_suite
    with criterion("median latency orders box < carve <= transplant < object-level, "
                   "box at least 5x faster"):
        results = bench_strategies(
            manifest.root, ["cutmix", "carvemix", "anatomix", "objectaug"],
            n_jobs=20, master_seed=11,
        )
        med = {s: results[s]["median_ms"] for s in results}
        print(f"  medians: {({k: round(v, 1) for k, v in med.items()})}")
        assert med["cutmix"] < med["carvemix"] <= med["anatomix"] < med["objectaug"], med
        for other in ("carvemix", "anatomix", "objectaug"):
            assert med[other] >= 5.0 * med["cutmix"], (other, med)


# ---------------------------------------------------------------------------
# 8. metrics
# ---------------------------------------------------------------------------

def test_metric_fixtures_and_aggregation_oracle():
    with criterion("dice fixtures exact; micro/macro match pooled-sum oracle to 1e-12"):
        schema = vx.LabelSchema(((1, "one"),))
        a = np.zeros((4, 4, 4), np.uint8)
        a[:2] = 1
        la = vx.LabelMap(a, schema)
        assert dice(la, vx.LabelMap(a.copy(), schema), 1) == 1.0
        b = np.zeros((4, 4, 4), np.uint8)
        b[2:] = 1
        assert dice(la, vx.LabelMap(b, schema), 1) == 0.0
        a = np.zeros((4, 4, 4), np.uint8)
        b = np.zeros((4, 4, 4), np.uint8)
        a[0, 0, :4] = 1
        b[0, 0, 2:4] = 1
        b[0, 1, :2] = 1
        assert dice(vx.LabelMap(a, schema), vx.LabelMap(b, schema), 1) == 0.5

        table = DiceTable(entries=[
            DiceEntry("s0", 1, 900, 1000, 1000),
            DiceEntry("s1", 1, 900, 1000, 1000),
            DiceEntry("s0", 2, 1, 10, 10),
            DiceEntry("s1", 2, 1, 10, 10),
        ])
        inter = 900 + 900 + 1 + 1
        sizes = 2 * (1000 + 1000) + 2 * (10 + 10)
        micro_oracle = 2.0 * inter / sizes
        macro_oracle = (0.9 + 0.9 + 0.1 + 0.1) / 4.0
        assert abs(aggregate(table, "micro") - micro_oracle) <= 1e-12
        assert abs(aggregate(table, "macro") - macro_oracle) <= 1e-12
