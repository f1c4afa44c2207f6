import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")


def periodized_gaussian(x, t, extent, dim=1, images=6):
    """Free evolution of exp(-pi|x|^2) on a torus, summed over periodic images.

    Uses the closed form (1 + 4 pi i t)^{-1/2} exp(-pi x^2 / (1 + 4 pi i t)) per axis.
    """
    a = 1 + 4j * np.pi * t
    out = 1.0
    for xm in (x if isinstance(x, (list, tuple)) else [x]):
        acc = 0
        for n in range(-images, images + 1):
            acc = acc + np.exp(-np.pi * (xm + n * extent) ** 2 / a)
        out = out * acc / np.sqrt(a)
    return out


@pytest.fixture(scope="session")
def gs1():
    from nlsmass.groundstate import ground_state

    return ground_state(1)


@pytest.fixture(scope="session")
def gs2():
    from nlsmass.groundstate import ground_state

    return ground_state(2)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one verdict line per acceptance criterion (printed in the summary)."""

    def emit(criterion: int, ok: bool, detail: str, elapsed: float) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s) {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
