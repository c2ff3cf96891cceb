from pathlib import Path

import numpy as np
import pytest

from srefi import dataset, fixtures


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory) -> Path:
    """Six subjects, three 128px images each, one demographic group."""
    out = tmp_path_factory.mktemp("fx_small")
    return fixtures.make_fixture(out, subjects=6, images_per_subject=3, size=128)


@pytest.fixture(scope="session")
def small_manifest(small_fixture) -> dataset.DatasetManifest:
    return dataset.load_manifest(small_fixture)


@pytest.fixture(scope="session")
def landmark_sets() -> list[np.ndarray]:
    """Procedural 68-point sets at 512px from distinct subjects and images."""
    return [fixtures.image_landmarks(f"s{s:03d}", i, 512) for s in range(6) for i in range(2)]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, text = RESULTS[number]
        terminalreporter.write_line(f"{status} criterion {number}: {text}")
