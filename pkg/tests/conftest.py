import numpy as np
import pytest

from cilab import blocks
from cilab.fields import Grid


@pytest.fixture
def grid32():
    return Grid(32, 5)


@pytest.fixture
def grid16():
    return Grid(16, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def lab_ledger(grid, **overrides):
    """Resolved lab parameters for the grid's Nyquist range."""
    cfg = {
        "mode": "lab", "lam_j": 0.5, "mu": 0.55, "eta": 1.2, "lam_jp1": 2.2,
        "delta_q": 0.3, "delta_qp1": 0.05, "delta_qp2": 0.006,
        "tau": 0.01, "mu_t": 0.24, "nyquist_safety": 0.4,
    }
    cfg.update(overrides)
    return blocks.build_ledger(cfg, grid)


@pytest.fixture
def ledger32(grid32):
    return lab_ledger(grid32)
