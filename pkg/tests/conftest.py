import numpy as np
import pytest

from rival.latent import seeded_rng
from rival.schedule import build_schedule


def structured_latent(seed: int, size: int = 8, channels: int = 3) -> np.ndarray:
    """Image-like latent in [-1, 1]: smooth per-channel patterns plus mild noise."""
    r = seeded_rng(1000 + seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = [
        0.6 * np.sin(3 * xx + r.uniform(0, 3)),
        0.5 * yy - 0.2,
        0.3 + 0.4 * xx * yy,
    ]
    base = np.stack([base[c % 3] for c in range(channels)])
    return np.clip(base + 0.1 * r.standard_normal((channels, size, size)), -1, 1)


@pytest.fixture(scope="session")
def schedule50():
    return build_schedule(inference_steps=50)


@pytest.fixture
def rng():
    return seeded_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
