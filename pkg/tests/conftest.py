import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from collapse_sde.state import GridSpec, PhysicalParams

settings.register_profile(
    "default", max_examples=30, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

NATURAL = PhysicalParams.natural()
ALPHA_STAR = (1 - 1j) / 2


@pytest.fixture
def params():
    return NATURAL


@pytest.fixture
def grid():
    return GridSpec.centered(10.0, 256)


@pytest.fixture
def wide_grid():
    return GridSpec.centered(12.0, 256)


def l2(a, b, dx):
    return float(np.sqrt(np.sum(np.abs(a - b) ** 2) * dx))


# criterion -> list of (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


def record_criterion(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(name, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
        parts = ACCEPTANCE[name]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
