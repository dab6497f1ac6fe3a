import numpy as np
import pytest

from gmc.model import ArchSpec, ParamVector

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(arch: ArchSpec, rng, scale=0.5) -> ParamVector:
    """Dense random parameters, biases included, so no unit sits at a ReLU kink."""
    return ParamVector(scale * rng.standard_normal(arch.num_params), arch)


def central_difference(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.empty_like(theta)
    for j in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (f(up) - f(down)) / (2 * h)
    return grad


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
