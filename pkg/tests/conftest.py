import numpy as np
import pytest

from probe_sensing import scenegen

# (criterion number, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        status = "PASS" if passed is True else ("SKIP" if passed is None else "FAIL")
        terminalreporter.write_line(f"[{status}] criterion {number}: {detail}")


@pytest.fixture(scope="session")
def scene_spec():
    return scenegen.SceneSpec()


@pytest.fixture(scope="session")
def generated_scenes(scene_spec):
    """(sample, surface, pose) for a handful of seeds, rendered once per session."""
    return [scenegen.generate_scene(scene_spec, seed, f"s{seed:03d}") for seed in range(6)]


@pytest.fixture(scope="session")
def samples(generated_scenes):
    return [s for s, _, _ in generated_scenes]


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, scene_spec):
    root = tmp_path_factory.mktemp("dataset")
    scenegen.generate_dataset(scene_spec, {"train": 8, "val": 2, "test": 2}, root, seed=7)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
