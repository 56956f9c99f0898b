import numpy as np
import pytest

from sasaki_ke.ma_solver import continuity_solve
from sasaki_ke.model import build_model

PERTURBED_EVEN = dict(band_limit=32, symmetry_mode="even", perturbation=((2, 0, 0.05),))

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def canonical():
    return build_model(band_limit=32)


@pytest.fixture(scope="session")
def canonical_small():
    return build_model(band_limit=16)


@pytest.fixture(scope="session")
def perturbed_even():
    return build_model(**PERTURBED_EVEN)


@pytest.fixture(scope="session")
def perturbed_full():
    return build_model(band_limit=16, perturbation=((2, 0, 0.05), (3, 1, 0.01)))


@pytest.fixture(scope="session")
def perturbed_family(perturbed_even):
    fam = continuity_solve(perturbed_even, "s2")
    assert not fam.stop_reason
    return fam


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
