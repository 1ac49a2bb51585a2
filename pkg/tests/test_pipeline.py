import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

import voxmix as vx
from voxmix.errors import PipelineError, PlanningError
from voxmix.pipeline import PipelineConfig, load_run_manifest, plan_outputs, run


def _config(small_suite, out_dir, **kw):
    _, manifest = small_suite
    defaults = dict(
        manifest_path=manifest.root,
        out_dir=out_dir,
        strategy="cutmix",
        multiplier=1,
        master_seed=7,
        workers=1,
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


def test_plan_counts_and_round_robin(small_suite, small_index, tmp_path):
    cfg = _config(small_suite, tmp_path, multiplier=10)
    jobs = plan_outputs(small_index, cfg)
    assert len(jobs) == 200
    backgrounds = [j.background_id for j in jobs]
    for cid in small_index.case_ids:
        assert backgrounds.count(cid) == 10
    assert all(j.source_id != j.background_id for j in jobs)
    assert len({j.output_id for j in jobs}) == 200
    assert len({j.seed for j in jobs}) == 200


def test_plan_deterministic(small_suite, small_index, tmp_path):
    cfg = _config(small_suite, tmp_path, multiplier=3)
    assert plan_outputs(small_index, cfg) == plan_outputs(small_index, cfg)


def test_plan_single_case_pair_free(tmp_path):
    spec = vx.small_phantom_spec()
    vx.generate_phantom_dataset(spec, 1, tmp_path / "one")
    index = vx.index_dataset(tmp_path / "one")
    cfg = PipelineConfig(tmp_path / "one", tmp_path / "o", "objectaug", 1, 0)
    jobs = plan_outputs(index, cfg)
    assert len(jobs) == 1 and jobs[0].source_id is None


def test_plan_pairwise_without_partner_fails(tmp_path):
    spec = vx.small_phantom_spec()
    vx.generate_phantom_dataset(spec, 1, tmp_path / "one")
    index = vx.index_dataset(tmp_path / "one")
    cfg = PipelineConfig(tmp_path / "one", tmp_path / "o", "cutmix", 1, 0)
    with pytest.raises(PlanningError, match="case_0000"):
        plan_outputs(index, cfg)


def test_config_validation(tmp_path):
    with pytest.raises(PlanningError):
        PipelineConfig(tmp_path, tmp_path, "mixup", 1, 0)
    with pytest.raises(PlanningError):
        PipelineConfig(tmp_path, tmp_path, "cutmix", 0, 0)
    with pytest.raises(PlanningError):
        PipelineConfig(tmp_path, tmp_path, "cutmix", 1, 0, workers=0)


def _tree_hashes(out_dir, skip=("run.jsonl",)):
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(out_dir).iterdir())
        if p.name not in skip
    }


def test_run_writes_outputs_and_manifest(small_suite, small_index, tmp_path):
    cfg = _config(small_suite, tmp_path / "out", multiplier=2, master_seed=3)
    records = run(cfg)
    assert len(records) == 40
    assert all(r["status"] == "ok" for r in records)
    assert all(r["millis"] >= 0 for r in records)
    original = set(small_index.case_ids)
    assert all(r["output_id"] not in original for r in records)

    header, recs = load_run_manifest(tmp_path / "out")
    assert header["n_jobs"] == 40
    assert [r["output_id"] for r in recs] == sorted(r["output_id"] for r in recs)

    # the output directory is itself an indexable dataset
    out_index = vx.index_dataset(tmp_path / "out")
    assert len(out_index) == 40


def test_run_worker_count_invariance(small_suite, tmp_path):
    cfg1 = _config(small_suite, tmp_path / "w1", multiplier=2, master_seed=11, workers=1)
    cfg2 = _config(small_suite, tmp_path / "w2", multiplier=2, master_seed=11, workers=2)
    rec1 = run(cfg1)
    rec2 = run(cfg2)
    assert _tree_hashes(tmp_path / "w1") == _tree_hashes(tmp_path / "w2")
    strip = lambda rs: sorted(
        [{k: v for k, v in r.items() if k != "millis"} for r in rs],
        key=lambda r: r["output_id"],
    )
    assert strip(rec1) == strip(rec2)


def test_run_same_seed_reproduces_bytes(small_suite, tmp_path):
    cfg1 = _config(small_suite, tmp_path / "a", multiplier=1, master_seed=5)
    cfg2 = _config(small_suite, tmp_path / "b", multiplier=1, master_seed=5)
    run(cfg1)
    run(cfg2)
    assert _tree_hashes(tmp_path / "a") == _tree_hashes(tmp_path / "b")


def test_run_different_seed_differs(small_suite, tmp_path):
    run(_config(small_suite, tmp_path / "a", master_seed=1))
    run(_config(small_suite, tmp_path / "b", master_seed=2))
    assert _tree_hashes(tmp_path / "a") != _tree_hashes(tmp_path / "b")


def test_failed_job_aborts_with_marker(small_suite, tmp_path, monkeypatch):
    calls = {"n": 0}
    from voxmix import pipeline as pl
    from voxmix import strategies as st

    original = st.cutmix

    def flaky(background, source, rng=None, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("synthetic failure")
        return original(background, source, rng, **kw)

    monkeypatch.setattr(pl, "cutmix", flaky)
    cfg = _config(small_suite, tmp_path / "out", multiplier=1, master_seed=9, workers=1)
    with pytest.raises(PipelineError, match="synthetic failure"):
        run(cfg)
    header, recs = load_run_manifest(tmp_path / "out")
    failed = [r for r in recs if r["status"] == "failed"]
    assert len(failed) == 1
    assert "synthetic failure" in failed[0]["error"]
    # run aborted: not all jobs were executed, partial outputs retained
    assert len(recs) < header["n_jobs"]
    ok = [r for r in recs if r["status"] == "ok"]
    for r in ok:
        assert (tmp_path / "out" / r["labels"]).exists()


def test_anatomix_plan_stored_in_manifest(small_suite, tmp_path):
    cfg = _config(small_suite, tmp_path / "out", strategy="anatomix", master_seed=2)
    run(cfg)
    header, recs = load_run_manifest(tmp_path / "out")
    assert header["anatomix_plan"] is not None
    assert len(header["anatomix_plan"]["entries"]) > 0
    assert all(r["strategy"] == "anatomix" for r in recs)


def test_bench_strategies_shared_pairs(small_suite):
    _, manifest = small_suite
    res = vx.bench_strategies(manifest.root, ["cutmix", "carvemix"], 6, 1)
    assert set(res) == {"cutmix", "carvemix"}
    for r in res.values():
        assert r["n"] == 6 and r["median_ms"] > 0


@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs a 4-core host")
def test_throughput_scales_with_workers(small_suite, tmp_path):
    import time

    t0 = time.perf_counter()
    run(_config(small_suite, tmp_path / "s1", multiplier=5, master_seed=1, workers=1))
    serial = time.perf_counter() - t0
    t0 = time.perf_counter()
    run(_config(small_suite, tmp_path / "s4", multiplier=5, master_seed=1, workers=4))
    parallel = time.perf_counter() - t0
    assert parallel <= 0.5 * serial


def test_bench_consecutive_medians_repeatable(standard_suite):
    # the 20 % bound assumes an idle host, which cannot be sensed reliably
    # from inside the suite; a trial invalidated by transient interference
    # gets retried rather than reported as a repeatability failure
    _, manifest = standard_suite
    vx.bench_strategies(manifest.root, ["carvemix"], 10, 5)  # warm-up
    spreads = []
    for _ in range(3):
        a = vx.bench_strategies(manifest.root, ["carvemix"], 30, 5)["carvemix"]["median_ms"]
        b = vx.bench_strategies(manifest.root, ["carvemix"], 30, 5)["carvemix"]["median_ms"]
        spreads.append(abs(a - b) / min(a, b))
        if spreads[-1] <= 0.20:
            return
    pytest.fail(f"consecutive bench medians spread {spreads} all exceed 20%")
