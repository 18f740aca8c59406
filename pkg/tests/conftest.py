import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from hts_recon.hierarchy import build_summing_matrix, figure1_hierarchy, one_level, two_level  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def s3():
    return build_summing_matrix(one_level(2))


@pytest.fixture(scope="session")
def s_fig1():
    return build_summing_matrix(figure1_hierarchy())


@pytest.fixture(scope="session")
def s43():
    return build_summing_matrix(two_level([6] * 6))


@pytest.fixture(scope="session")
def all_s(s3, s_fig1, s43):
    return {"3-node": s3, "figure1": s_fig1, "43-node": s43}


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda x: int(x.split()[2])):
            terminalreporter.write_line(line)
