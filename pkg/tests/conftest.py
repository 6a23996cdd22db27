"""Shared fixtures and hypothesis profiles."""

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gtsym.model import ModelParams
from gtsym.spectral import obc_eigensystem

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


@lru_cache(maxsize=None)
def cached_eigensystem(t3: float, t4: float, n_cells: int = 40, t1: float = 1.0, t2: float = 2.0):
    return obc_eigensystem(ModelParams(t1, t2, t3, t4, n_cells))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def params(t3, t4, n_cells=40, t1=1.0, t2=2.0) -> ModelParams:
    return ModelParams(t1, t2, t3, t4, n_cells)


def multiset_distance(a, b) -> float:
    """Largest distance in the optimal one-to-one matching of two point sets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


@lru_cache(maxsize=None)
def cached_path_scan(path: str, samples: int = 32):
    from gtsym.phases import lyapunov_path_scan

    return lyapunov_path_scan(path, samples)


@lru_cache(maxsize=None)
def cached_phase_diagram(kind: str, lo: float, hi: float, resolution: int = 16, t1: float = 1.0, t2: float = 2.0):
    from gtsym.phases import phase_diagram

    return phase_diagram(kind, (lo, hi), (lo, hi), resolution, base=ModelParams(t1, t2, 1.0, 1.0))


def line_gap(t3: float, t4: float, t1: float = 1.0, t2: float = 2.0, k_count: int = 2001) -> float:
    """Independent line-gap oracle: twice the distance of the PBC bands from ``Re E = 0``.

    Chiral pairing ``E <-> -E`` puts the line gap at ``Re E = 0``; it is
    zero (to rounding) wherever a band reaches the imaginary axis.
    """
    from gtsym.model import build_bloch

    k = np.linspace(-np.pi, np.pi, k_count)
    E = np.linalg.eigvals(build_bloch(ModelParams(t1, t2, t3, t4), k))
    return float(-2 * np.sort(E.real, axis=-1)[:, 1].max())


def bisect_gap_closing(cut, lo: float, hi: float, steps: int = 40) -> float:
    """Bisect the gapped/gapless change of ``line_gap(*cut(x))`` on ``[lo, hi]``."""
    def gapped(x):
        return line_gap(*cut(x)) > 1e-8

    side = gapped(lo)
    if gapped(hi) == side:
        raise ValueError("no gap closing inside the interval")
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if gapped(mid) == side:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
