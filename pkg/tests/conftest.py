import os
import numpy as np
import pytest

from anosov_lab.configs import bundled_config_paths
from anosov_lab.lab.config import ingest_config
from anosov_lab.lab.experiment import Experiment
from anosov_lab.spectra import Representation

BUNDLED = ("schottky_pair", "sl3_gaps", "sl2_sl3_product", "sl3_hilbert")


def hyperbolic(length: float, angle: float) -> np.ndarray:
    """Symmetric SL2 matrix with translation length ``length`` and axis at ``angle``."""
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([np.exp(length / 2), np.exp(-length / 2)]) @ R.T


@pytest.fixture(scope="session")
def schottky_rep() -> Representation:
    return Representation("schottky", [hyperbolic(2.0, 0.0), hyperbolic(3.0, np.pi / 4)])


@pytest.fixture(scope="session")
def bundled_configs():
    paths = bundled_config_paths()
    return {name: ingest_config(paths[name]) for name in BUNDLED}


@pytest.fixture(scope="session")
def bundled_experiments(bundled_configs):
    """Experiments on the bundled configurations, shared across modules.

    Samples are built in memory unless ANOSOV_LAB_CACHE points to a cache."""
    return {name: Experiment(cfg, cache_dir=os.environ.get("ANOSOV_LAB_CACHE")) for name, cfg in bundled_configs.items()}


@pytest.fixture
def report_line(capsys):
    """Print one pass/fail line that survives output capture."""

    def emit(label: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")

    return emit
