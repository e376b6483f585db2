import numpy as np
import pytest

_VERDICTS = []


def orthogonal_design(n, p, rng):
    """n x p design with X'X = n I."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return np.sqrt(n) * Q


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def exp1_report():
    """Experiment 1, r = 1, 100 replications, every method (shared by several tests)."""
    from cards.simulation import SimConfig, run_replications

    return run_replications(SimConfig("exp1", r=1.0, reps=100, master_seed=0, workers=1))


@pytest.fixture(scope="session")
def exp2_report():
    from cards.simulation import SimConfig, run_replications

    return run_replications(SimConfig("exp2", r=1.0, reps=100, master_seed=0, workers=1))


@pytest.fixture
def verdict():
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""

    def emit(label: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        print(line)
        _VERDICTS.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
