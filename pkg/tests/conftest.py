import numpy as np
import pytest

import voxmix as vx


@pytest.fixture(scope="session")
def small_suite(tmp_path_factory):
    """20-case 32-cube suite used for pipeline protocol tests."""
    root = tmp_path_factory.mktemp("small_suite")
    spec = vx.small_phantom_spec()
    manifest = vx.generate_phantom_dataset(spec, 20, root)
    return spec, manifest


@pytest.fixture(scope="session")
def small_index(small_suite):
    _, manifest = small_suite
    return vx.index_dataset(manifest.root)


@pytest.fixture(scope="session")
def standard_suite(tmp_path_factory):
    """The standard 20-case 96-cube audit/benchmark suite."""
    root = tmp_path_factory.mktemp("standard_suite")
    spec = vx.standard_phantom_spec()
    manifest = vx.generate_phantom_dataset(spec, 20, root)
    return spec, manifest


@pytest.fixture(scope="session")
def standard_index(standard_suite):
    _, manifest = standard_suite
    return vx.index_dataset(manifest.root)


class CaseCache:
    """Loads manifest cases once; handcrafted cases can be injected."""

    def __init__(self, manifest):
        self.manifest = manifest
        self._cases = {}

    def add(self, case):
        self._cases[case.id] = case

    def __call__(self, case_id):
        if case_id not in self._cases:
            self._cases[case_id] = vx.read_manifest_case(self.manifest, case_id)
        return self._cases[case_id]


@pytest.fixture()
def small_cases(small_suite):
    _, manifest = small_suite
    return CaseCache(manifest)


@pytest.fixture()
def standard_cases(standard_suite):
    _, manifest = standard_suite
    return CaseCache(manifest)


def make_case(case_id, labels, schema, rng=None, spacing=(1.0, 1.0, 1.0), channels=1):
    """Small handcrafted case: intensity = 100 * label + noise."""
    rng = rng or np.random.default_rng(0)
    img = np.stack(
        [labels.astype(np.float32) * 100.0 + rng.normal(0, 1, labels.shape).astype(np.float32)
         for _ in range(channels)]
    )
    return vx.Case(case_id, vx.Volume(img, spacing), vx.LabelMap(labels, schema))
