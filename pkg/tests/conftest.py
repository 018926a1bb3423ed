import functools

import numpy as np
import pytest

from hypmin.cone_profile import solve_cone_profile
from hypmin.elliptic import solve_domain
from hypmin.geometry import Disk, lens_domain


@functools.lru_cache(maxsize=None)
def profile(mu, n=2):
    return solve_cone_profile(mu, n)


@pytest.fixture(scope="session")
def unit_disk():
    return Disk(radius=1.0)


@pytest.fixture(scope="session")
def half_lens():
    return lens_domain((0.0, 0.0), 0.5, 1.0, 1.0)


@pytest.fixture(scope="session")
def disk128(unit_disk):
    return solve_domain(unit_disk, 128)


@pytest.fixture(scope="session")
def disk256(unit_disk):
    return solve_domain(unit_disk, 256)


@pytest.fixture(scope="session")
def lens128(half_lens):
    return solve_domain(half_lens, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
