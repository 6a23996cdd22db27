"""Eigenmode and dynamic phase classification and parameter scans."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .dynamics import growth_rate_fit
from .errors import ClassificationAmbiguous, InvalidArgument, NumericalFailure, UnsupportedBipolar
from .gbz import lyapunov_zero_drift
from .model import ModelParams
from .spectral import complex_zak_phase, energy_windings, obc_spectrum, pbc_bands

__all__ = [
    "DynamicPhaseClassifier",
    "DynamicPhaseLabel",
    "EigenmodePhaseClassifier",
    "EigenmodePhaseLabel",
    "PathSample",
    "PhaseGrid",
    "ZAK_TOL",
    "dynamic_phase",
    "eigenmode_phase",
    "lyapunov_path_scan",
    "path_params",
    "phase_diagram",
    "second_difference_spike",
    "worker_count",
]

ZAK_TOL = 1e-3
REAL_SPECTRUM_TOL = 1e-8  # relative to the spectral radius
DOMINANT_TOL = 1e-3  # relative to max Im E
CLUSTER_GAP = 10.0  # in units of the dominant tolerance
WORKERS_ENV = "GTSYM_WORKERS"

_REGION = {"nontrivial": "I", "gapless": "II", "trivial": "III"}


# ---------------------------------------------------------------------------
# eigenmode phases


@dataclass(frozen=True)
class EigenmodePhaseLabel:
    """Band topology and skin direction of one parameter point.

    ``region`` is ``I``, ``II`` or ``III`` for nontrivial, gapless and
    trivial, primed when the skin effect points right, and ``Hermitian`` on
    the line ``t3 == t4``. The facts it is built from are kept alongside.
    """

    topology: Literal["nontrivial", "trivial", "gapless"]
    nhse: Literal["left", "right", "none"]
    region: str
    zak_total: float
    winding: int

    def as_dict(self) -> dict:
        return asdict(self)


def _reference_energies(params: ModelParams, k_count: int, n_ref: int = 8) -> np.ndarray:
    """Candidate points inside the PBC loops.

    Time reversal makes the PBC spectrum symmetric about the real axis, so
    ``Re E_n(k)`` lies between ``E_n(k)`` and ``E_n(-k) = conj(E_n(k))``.
    The band-pair centroids are added as well.
    """
    bands = pbc_bands(params, k_count)
    E = bands.energies
    idx = np.linspace(0, k_count // 2, n_ref + 2).astype(int)[1:-1]
    refs = [E[:, idx].real.reshape(-1).astype(complex), [E[:2].mean(), E[2:].mean()]]
    return np.unique(np.round(np.concatenate(refs), 9))


def _winding(params: ModelParams, k_count: int) -> int:
    """Signed energy winding of the PBC loops.

    Windings are taken about several reference points inside the loops. A
    single nonzero sign is returned; both signs at once signal a bipolar
    skin effect, which is out of scope.
    """
    if params.is_hermitian:
        return 0
    w = energy_windings(params, _reference_energies(params, k_count))
    values = set(int(v) for v in w[np.isfinite(w)])
    values.discard(0)
    if not values:
        return 0
    if len(values) > 1:
        raise UnsupportedBipolar(f"PBC loops wind both ways: {sorted(values)}")
    return values.pop()


def eigenmode_phase(params: ModelParams, k_count: int = 256) -> EigenmodePhaseLabel:
    """Classify topology from the complex Zak phase and direction from the winding.

    The two lower-``Re E`` bands are taken as occupied. A closed line gap
    gives ``gapless``; otherwise the total Zak phase must lie within
    ``ZAK_TOL`` of ``0`` or ``pi`` (mod ``2 pi``).
    """
    zak = complex_zak_phase(params, k_count)
    if zak.gapless:
        topology = "gapless"
    else:
        z = zak.total_occupied % (2 * np.pi)
        if abs(z - np.pi) < ZAK_TOL:
            topology = "nontrivial"
        elif min(z, 2 * np.pi - z) < ZAK_TOL:
            topology = "trivial"
        else:
            raise ClassificationAmbiguous(f"Zak phase {z:.6f} is not quantized")
    w = _winding(params, k_count)
    nhse = {-1: "left", 1: "right", 0: "none"}.get(w)
    if nhse is None:
        raise ClassificationAmbiguous(f"winding {w} outside the single-loop model")
    if params.is_hermitian:
        region = "Hermitian"
    else:
        region = _REGION[topology] + ("'" if nhse == "right" else "")
    return EigenmodePhaseLabel(topology, nhse, region, float(zak.total_occupied), int(w))


# ---------------------------------------------------------------------------
# dynamic phases


@dataclass(frozen=True)
class DynamicPhaseLabel:
    """Long-time dynamic class of one parameter point.

    ``frequency`` is ``dual`` when the fastest-growing modes sit at a
    nonzero ``+-f`` pair, ``single`` when they sit at ``Re E = 0`` and
    ``all_real`` when the open spectrum is real.
    """

    phase_class: Literal["Hermitian", "A", "A'", "B", "B'", "C", "C'"]
    frequency: Literal["dual", "single", "all_real"]
    direction: Literal["left", "right", "none"]
    max_imag: float
    dominant_energies: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["dominant_energies"] = [complex(e) for e in self.dominant_energies]
        return d


def _clusters_1d(x: np.ndarray, gap: float) -> list[np.ndarray]:
    x = np.sort(x)
    cuts = np.flatnonzero(np.diff(x) > gap) + 1
    return np.split(x, cuts)


def dynamic_phase(params: ModelParams, n_cells: int | None = None, energies: np.ndarray | None = None) -> DynamicPhaseLabel:
    """Classify the long-time dynamics from the open-chain spectrum.

    Real spectra (``max |Im E| < REAL_SPECTRUM_TOL * rho``) give ``C``.
    Otherwise the modes within ``DOMINANT_TOL * max Im E`` of the largest
    imaginary part are clustered by ``|Re E|``: a single cluster away from
    zero means two frequencies ``+-f`` (``A``), a cluster at zero means one
    (``B``). Primes mark ``t3 < t4``, where the drift points right.
    """
    if n_cells is not None:
        params = params.replace(n_cells=n_cells)
    if params.n_cells < 40:
        raise InvalidArgument(f"n_cells must be at least 40, got {params.n_cells}")
    if params.is_hermitian:
        return DynamicPhaseLabel("Hermitian", "all_real", "none", 0.0)
    E = obc_spectrum(params) if energies is None else np.asarray(energies, dtype=complex)
    rho = np.abs(E).max()
    direction = "left" if params.t3 > params.t4 else "right"
    prime = "" if direction == "left" else "'"
    g = E.imag.max()
    if np.abs(E.imag).max() < REAL_SPECTRUM_TOL * rho:
        return DynamicPhaseLabel("C" + prime, "all_real", direction, float(g))
    eps = DOMINANT_TOL * g
    top = E[E.imag > g - eps]
    groups = _clusters_1d(np.abs(top.real), CLUSTER_GAP * eps)
    if len(groups) > 1:
        raise ClassificationAmbiguous(
            f"{len(groups)} frequency clusters among dominant modes at {params.couplings}"
        )
    f = float(groups[0].mean())
    freq = "dual" if f > CLUSTER_GAP * eps else "single"
    letter = "A" if freq == "dual" else "B"
    return DynamicPhaseLabel(letter + prime, freq, direction, float(g), tuple(top))


# ---------------------------------------------------------------------------
# scans


def worker_count(workers: int | None = None) -> int:
    """Explicit count, else ``$GTSYM_WORKERS``, else 1."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers < 1:
        raise InvalidArgument(f"worker count must be positive, got {workers}")
    return workers


def _classify_point(args):
    kind, params = args
    try:
        if kind == "eigenmode":
            return eigenmode_phase(params).as_dict()
        return dynamic_phase(params).as_dict()
    except (ClassificationAmbiguous, NumericalFailure, InvalidArgument) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class PhaseGrid:
    """Labels on a ``(t3, t4)`` grid.

    ``labels[i, j]`` belongs to ``t3[i], t4[j]``. ``records`` keeps every
    field of the classification (or an ``error`` entry). ``boundaries``
    lists label changes between neighbouring points as
    ``(i0, j0, i1, j1)`` index quadruples.
    """

    kind: str
    t3: np.ndarray
    t4: np.ndarray
    labels: np.ndarray
    records: list
    boundaries: list

    def boundary_midpoints(self) -> np.ndarray:
        """``(t3, t4)`` midpoints of the boundary edges."""
        if not self.boundaries:
            return np.zeros((0, 2))
        b = np.asarray(self.boundaries)
        return np.column_stack(
            [0.5 * (self.t3[b[:, 0]] + self.t3[b[:, 2]]), 0.5 * (self.t4[b[:, 1]] + self.t4[b[:, 3]])]
        )


def _label_of(kind: str, rec: dict) -> str:
    if "error" in rec:
        return "error"
    return rec["region"] if kind == "eigenmode" else rec["phase_class"]


def phase_diagram(
    kind: Literal["eigenmode", "dynamic"],
    t3_range: tuple[float, float],
    t4_range: tuple[float, float],
    resolution: int,
    base: ModelParams | None = None,
    workers: int | None = None,
) -> PhaseGrid:
    """Classify every point of a ``resolution x resolution`` grid.

    ``base`` supplies ``t1``, ``t2`` and ``n_cells`` (default ``1, 2, 40``).
    Points that raise are recorded with an ``error`` entry and labelled
    ``error``. The result does not depend on the number of workers.
    """
    if kind not in ("eigenmode", "dynamic"):
        raise InvalidArgument(f"kind must be 'eigenmode' or 'dynamic', got {kind!r}")
    if resolution < 16:
        raise InvalidArgument(f"resolution must be at least 16, got {resolution}")
    base = ModelParams(1.0, 2.0, 1.0, 1.0) if base is None else base
    t3 = np.linspace(*t3_range, resolution)
    t4 = np.linspace(*t4_range, resolution)
    jobs = [(kind, base.replace(t3=float(a), t4=float(b))) for a in t3 for b in t4]
    n = worker_count(workers)
    if n == 1:
        records = [_classify_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(_classify_point, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    labels = np.array([_label_of(kind, r) for r in records], dtype=object).reshape(resolution, resolution)
    edges = []
    for i in range(resolution):
        for j in range(resolution):
            if i + 1 < resolution and labels[i, j] != labels[i + 1, j]:
                edges.append((i, j, i + 1, j))
            if j + 1 < resolution and labels[i, j] != labels[i, j + 1]:
                edges.append((i, j, i, j + 1))
    return PhaseGrid(kind, t3, t4, labels, records, edges)


# ---------------------------------------------------------------------------
# Lyapunov paths

PATH_RANGE = (0.0, 8.0)


def path_params(path: Literal["path1", "path2"], m, base: ModelParams | None = None) -> ModelParams:
    """Couplings along the two scan paths: ``(2 + m, 2)`` and ``(10, 2 + m)``."""
    base = ModelParams(1.0, 2.0, 1.0, 1.0) if base is None else base
    if path == "path1":
        return base.replace(t3=2.0 + float(m), t4=2.0)
    if path == "path2":
        return base.replace(t3=10.0, t4=2.0 + float(m))
    raise InvalidArgument(f"path must be 'path1' or 'path2', got {path!r}")


@dataclass(frozen=True)
class PathSample:
    m: float
    t3: float
    t4: float
    lam: float
    growth_fit: float
    phase_class: str
    error: str | None = None


def _path_sample(args) -> PathSample:
    path, m, base, t_window = args
    p = path_params(path, m, base)
    try:
        cls = dynamic_phase(p).phase_class
    except ClassificationAmbiguous:
        cls = "ambiguous"
    try:
        lam = lyapunov_zero_drift(p)
        fit = growth_rate_fit(p, t_window=t_window)
        return PathSample(float(m), p.t3, p.t4, lam, fit, cls)
    except (NumericalFailure, InvalidArgument) as exc:
        return PathSample(float(m), p.t3, p.t4, np.nan, np.nan, cls, f"{type(exc).__name__}: {exc}")


def lyapunov_path_scan(
    path: Literal["path1", "path2"],
    samples: int,
    m_range: tuple[float, float] = PATH_RANGE,
    base: ModelParams | None = None,
    t_window: tuple[float, float] = (2000.0, 4000.0),
    workers: int | None = None,
) -> list[PathSample]:
    """Zero-drift Lyapunov exponent and direct growth-rate fit along a path.

    ``m`` takes ``samples`` values ``m_range[0] + i * step`` with the end
    point excluded. Failures are recorded per sample.
    """
    if samples < 16:
        raise InvalidArgument(f"samples must be at least 16, got {samples}")
    path_params(path, 0.0)  # validates the name
    ms = np.linspace(*m_range, samples, endpoint=False)
    jobs = [(path, m, base, t_window) for m in ms]
    n = worker_count(workers)
    if n == 1:
        return [_path_sample(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_path_sample, jobs))


def second_difference_spike(values) -> tuple[int, float]:
    """Index and size of the largest ``|f[i-1] - 2 f[i] + f[i+1]|``."""
    v = np.asarray(values, dtype=float)
    d2 = np.abs(v[:-2] - 2 * v[1:-1] + v[2:])
    i = int(np.nanargmax(d2))
    return i + 1, float(d2[i])


# ---------------------------------------------------------------------------
# estimator-style wrappers


class _PhaseClassifier:
    """Fit-free classifier over rows ``(t3, t4)`` or ``(t1, t2, t3, t4)``."""

    def __init__(self, t1: float = 1.0, t2: float = 2.0, n_cells: int = 40):
        self.t1 = t1
        self.t2 = t2
        self.n_cells = n_cells

    def get_params(self, deep: bool = True) -> dict:
        return {"t1": self.t1, "t2": self.t2, "n_cells": self.n_cells}

    def set_params(self, **params):
        for k, v in params.items():
            if k not in self.get_params():
                raise InvalidArgument(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, X=None, y=None):
        return self

    def _rows(self, X) -> list[ModelParams]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] == 2:
            return [ModelParams(self.t1, self.t2, a, b, self.n_cells) for a, b in X]
        if X.shape[1] == 4:
            return [ModelParams(*row, n_cells=self.n_cells) for row in X]
        raise InvalidArgument("rows must hold (t3, t4) or (t1, t2, t3, t4)")

    def predict(self, X) -> np.ndarray:
        return np.array([self._label(p) for p in self._rows(X)], dtype=object)


class EigenmodePhaseClassifier(_PhaseClassifier):
    """Predicts eigenmode regions (``I``, ``II'``, ``Hermitian`` ...)."""

    def _label(self, p: ModelParams) -> str:
        return eigenmode_phase(p).region


class DynamicPhaseClassifier(_PhaseClassifier):
    """Predicts dynamic classes (``A``, ``B'``, ``C`` ...)."""

    def _label(self, p: ModelParams) -> str:
        return dynamic_phase(p).phase_class
