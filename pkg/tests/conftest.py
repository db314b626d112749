import numpy as np
import pytest

from pannid import datagen


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_strip():
    """4x4-element strip used by the assembly tests."""
    return datagen.generate_mesh(datagen.Strip(4.0, 8.0, 4, 4))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Call the returned function with the criterion label, the outcome and a
    short detail string; the line is printed immediately and repeated in the
    terminal summary.
    """
    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
