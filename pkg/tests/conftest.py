import numpy as np
import pytest

from fibercollective.couplings import CouplingParams, CouplingSet, EmitterChain, build
from fibercollective.fiber import FiberSpec, solve_dispersion


@pytest.fixture(scope="session")
def spec_1um():
    return FiberSpec.calibrated(1.0)


@pytest.fixture(scope="session")
def spec_5um():
    return FiberSpec.calibrated(5.0)


@pytest.fixture(scope="session")
def table_1um(spec_1um):
    return solve_dispersion(spec_1um)


@pytest.fixture(scope="session")
def table_5um(spec_5um):
    return solve_dispersion(spec_5um)


@pytest.fixture
def chain10_coupling():
    """Ten atoms at d = 0.59 with the single toy mode and alpha = 0.75."""
    return build(EmitterChain.regular(10, 0.59), CouplingParams(alpha=0.75))


def random_coupling(rng, n, alpha_max=1.0):
    """Random chain geometry and guided fraction; always PSD (unbroadened)."""
    gaps = rng.uniform(0.15, 1.2, size=n - 1)
    z = np.concatenate([[0.0], np.cumsum(gaps)])
    alpha = rng.uniform(0.0, alpha_max)
    beta = rng.uniform(1.01, 1.4)
    from fibercollective.fiber import ModeTable
    return build(EmitterChain(z), CouplingParams(alpha=alpha,
                                                 modes=ModeTable.single(beta, 1.0)))


def random_bloch(rng, n, pure=True):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if not pure:
        v *= rng.uniform(0.2, 1.0, size=(n, 1))
    return v


def diagonal_coupling(n, rate=1.0):
    g = rate * np.eye(n)
    return CouplingSet(np.zeros((n, n)), g, rate)


# ----------------------------------------------------------------------
# acceptance verdict lines
# ----------------------------------------------------------------------

def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line per acceptance criterion, then assert."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
