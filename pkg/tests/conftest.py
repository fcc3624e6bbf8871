import numpy as np
import pytest

from heatdpg.mesh import EQUAL, PARABOLIC, new_uniform, refine

# lines reported by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def random_mesh(seed: int, rounds: int, frac: float = 0.3):
    """Mesh after ``rounds`` random refinements of the 1x1 or 2x2 mesh."""
    rng = np.random.default_rng(seed)
    mesh = new_uniform(*(1, 1) if rng.random() < 0.3 else (2, 2))
    for _ in range(rounds):
        k = max(1, int(frac * mesh.n_cells))
        marked = rng.choice(mesh.n_cells, size=k, replace=False)
        mesh = refine(mesh, marked, PARABOLIC if rng.random() < 0.4 else EQUAL)
    return mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
