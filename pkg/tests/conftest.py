import pytest

from cmcsurf.geometry import build_bolza_octagon, build_flat_torus_patch, build_hyperbolic_disk_patch

_ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion:2d}: {detail}"
    _ACCEPTANCE.setdefault(criterion, []).append((passed, line))
    print(line)
    return passed


@pytest.fixture
def accept():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        rows = _ACCEPTANCE[crit]
        ok = all(p for p, _ in rows)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}")
        for _, line in rows:
            terminalreporter.write_line("    " + line)


@pytest.fixture(scope="session")
def torus16():
    return build_flat_torus_patch(16)


@pytest.fixture(scope="session")
def disk16():
    return build_hyperbolic_disk_patch(16, 0.5)


@pytest.fixture(scope="session")
def disk32():
    return build_hyperbolic_disk_patch(32, 0.5)


@pytest.fixture(scope="session")
def bolza32():
    return build_bolza_octagon(32)


@pytest.fixture(scope="session")
def bolza48():
    return build_bolza_octagon(48)


@pytest.fixture(scope="session")
def bolza96():
    return build_bolza_octagon(96)
