"""Biorthogonal eigensystems, Bloch bands and topological invariants."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegeneracyWarning, InvalidArgument, NumericalFailure
from .model import ModelParams, build_bloch, build_real_space
from .polynomial import characteristic_beta_roots

__all__ = [
    "BandStructure",
    "BiorthogonalEigensystem",
    "ModeClassification",
    "ObcAnalysis",
    "ZakPhase",
    "biorthogonal_eigensystem",
    "classify_modes",
    "complex_zak_phase",
    "energy_winding",
    "energy_windings",
    "kramers_gap",
    "obc_analysis",
    "obc_eigensystem",
    "obc_spectrum",
    "pbc_bands",
    "skin_gauge_radius",
    "spectrum_distance",
]

NEAR_DEFECTIVE_TOL = 1e-8
GAPLESS_TOL = 1e-6
ZERO_MODE_TOL = 1e-8
EDGE_WEIGHT = 0.5
EDGE_FRACTION = 0.1
EXTENDED_REFINE_MAX = 400


# ---------------------------------------------------------------------------
# biorthogonal eigensystem


@dataclass(frozen=True)
class BiorthogonalEigensystem:
    """Eigenvalues with paired right (columns) and left (rows) eigenvectors.

    ``left[i] @ right[:, j]`` is the overlap ``<L_i|R_j>``. The right vectors
    have unit Euclidean norm in the solving gauge (see ``gauge``) and the
    left vectors are scaled so that the overlap matrix is the identity.
    Normalizing in the gauge keeps the overlap errors at the level reached
    by the solver; renormalizing in the original basis would rescale entry
    ``(i, j)`` of the error by the ratio of the two modes' norms.

    Attributes
    ----------
    eigenvalues : ndarray, shape (n,)
    right : ndarray, shape (n, n)
    left : ndarray, shape (n, n)
    condition_flag : float
        Smallest normalized overlap ``|<L_i|R_i>| / (|L_i| |R_i|)``, computed
        in the gauge the eigenproblem was solved in. Values near zero signal an
        exceptional point.
    near_defective : bool
        ``condition_flag < NEAR_DEFECTIVE_TOL``.
    gauge : ndarray or None
        Diagonal similarity ``S`` the problem was solved in, ``S^-1 A S``.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    condition_flag: float
    near_defective: bool
    gauge: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def overlaps(self) -> np.ndarray:
        return self.left @ self.right

    def biorthogonality_error(self) -> float:
        return float(np.abs(self.overlaps() - np.eye(self.size)).max())

    def reconstruct(self) -> np.ndarray:
        return (self.right * self.eigenvalues) @ self.left

    def reconstruction_error(self, matrix: np.ndarray, in_gauge: bool = True) -> float:
        """Relative Frobenius error of ``sum_j E_j |R_j><L_j|``.

        By default the comparison is made in the gauge the eigenproblem was
        solved in, ``S^-1 A S``. In the original basis skin modes span many
        orders of magnitude and the outer products cancel catastrophically.
        """
        matrix = np.asarray(matrix)
        if in_gauge and self.gauge is not None:
            Rg, Lg, s = self.gauged()
            matrix = matrix * s[None, :] / s[:, None]
            recon = (Rg * self.eigenvalues) @ Lg
        else:
            recon = self.reconstruct()
        return float(np.linalg.norm(recon - matrix) / np.linalg.norm(matrix))

    def gauged(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(R', L', s)`` with ``R = diag(s) R'`` and ``L = L' diag(s)^-1``."""
        s = np.ones(self.size) if self.gauge is None else self.gauge
        return self.right / s[:, None], self.left * s[None, :], s

    def expansion(self, state: np.ndarray) -> np.ndarray:
        """Coefficients ``<L_j|state>``."""
        return self.left @ np.asarray(state)


def biorthogonal_eigensystem(
    matrix, gauge: np.ndarray | None = None, cluster_tol: float = 1e-7
) -> BiorthogonalEigensystem:
    """Biorthogonal eigendecomposition of a square matrix.

    Right vectors come from ``eig(A)`` and left vectors from ``eig(A^H)``.
    The two sets are paired by a minimum-cost assignment on
    ``|E_i - conj(mu_j)|``. Inside clusters of nearly equal eigenvalues the
    pairing is ambiguous, so the left rows of a cluster are replaced by the
    dual basis of its right columns. One Newton-Schulz step then polishes the
    global biorthogonality.

    Parameters
    ----------
    matrix : array_like
        Square matrix with finite entries.
    gauge : ndarray, optional
        Positive diagonal ``s``; the eigenproblem of ``S^-1 A S`` is solved and
        the vectors mapped back. A good gauge tames skin-effect non-normality.
    cluster_tol : float
        Relative eigenvalue distance below which modes are treated as a cluster.
    """
    A = np.asarray(matrix)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgument("matrix has non-finite entries")
    n = A.shape[0]
    s = None if gauge is None else np.asarray(gauge, dtype=float)
    Ag = A if s is None else A * s[None, :] / s[:, None]

    if np.array_equal(Ag, Ag.conj().T):
        E, R = np.linalg.eigh(Ag)
        E = E.astype(complex)
        R = R.astype(complex)
        L = R.conj().T
    else:
        E, R = np.linalg.eig(Ag)
        mu, Lc = np.linalg.eig(Ag.conj().T)
        cost = np.abs(E[:, None] - mu.conj()[None, :])
        _, col = linear_sum_assignment(cost)
        L = Lc[:, col].conj().T
        R = R / np.linalg.norm(R, axis=0)
        L = L / np.linalg.norm(L, axis=1)[:, None]
        scale = max(np.abs(E).max(), 1.0)
        for idx in _clusters(E, cluster_tol * scale):
            if idx.size == 1:
                i = idx[0]
                L[i] = L[i] / (L[i] @ R[:, i])
            else:
                L[idx] = np.linalg.solve(L[idx] @ R[:, idx], L[idx])
        L = _refine_inverse(R, L)

    kappa = np.linalg.norm(L, axis=1) * np.linalg.norm(R, axis=0)
    condition_flag = float(1.0 / kappa.max())
    near_defective = condition_flag < NEAR_DEFECTIVE_TOL
    if near_defective:
        warnings.warn(f"eigensystem close to an exceptional point (condition flag {condition_flag:.2e})",
                      DegeneracyWarning, stacklevel=2)

    nu = np.linalg.norm(R, axis=0)
    R = R / nu
    L = L * nu[:, None]
    if s is not None:
        R = R * s[:, None]
        L = L / s[None, :]

    order = np.lexsort((np.round(E.imag, 12), np.round(E.real, 12)))
    return BiorthogonalEigensystem(
        eigenvalues=E[order],
        right=R[:, order],
        left=L[order],
        condition_flag=condition_flag,
        near_defective=near_defective,
        gauge=s,
    )


def _refine_inverse(R: np.ndarray, L: np.ndarray, max_steps: int = 4) -> np.ndarray:
    """Newton-Schulz steps ``L + L (I - R L)`` towards ``inv(R)``.

    The residual is formed in extended precision for matrices up to
    ``EXTENDED_REFINE_MAX`` rows; in double precision the iteration stalls
    near ``eps * cond(R)**2``. Iteration stops when the residual no longer
    shrinks.
    """
    n = R.shape[0]
    extended = n <= EXTENDED_REFINE_MAX
    dtype = np.clongdouble if extended else complex
    Rx = R.astype(dtype)
    eye = np.eye(n, dtype=dtype)
    best = np.inf
    for _ in range(max_steps):
        Lx = L.astype(dtype)
        residual = eye - Lx @ Rx
        size = float(np.abs(residual).max())
        if size >= 0.5 * best:
            break
        best = size
        L = L + (residual @ Lx).astype(complex)
    return L


def _clusters(E: np.ndarray, tol: float) -> list[np.ndarray]:
    """Connected groups of eigenvalues closer than ``tol``."""
    n = E.size
    order = np.argsort(E.real)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    er = E.real[order]
    for a in range(n):
        b = a + 1
        while b < n and er[b] - er[a] < tol:
            i, j = order[a], order[b]
            if abs(E[i] - E[j]) < tol:
                parent[find(i)] = find(j)
            b += 1
    roots = np.array([find(i) for i in range(n)])
    return [np.flatnonzero(roots == r) for r in np.unique(roots)]


# ---------------------------------------------------------------------------
# open-chain spectra


def skin_gauge_radius(params: ModelParams, energies: np.ndarray | None = None) -> float:
    """Radius ``r`` of the similarity ``diag(r**m)`` that undoes the skin effect.

    Bulk OBC modes decay like ``|beta|**m`` with ``|beta|`` on the GBZ. Taking
    ``r`` as the geometric mean of the GBZ radii spreads the modes evenly
    across the chain after the similarity transform.
    """
    if params.is_hermitian:
        return 1.0
    if energies is None:
        energies = np.linalg.eigvals(build_real_space(params))
    roots = np.abs(characteristic_beta_roots(params, energies))
    inner, outer = roots[:, 1], roots[:, 2]
    bulk = outer < 1.1 * inner
    if not np.any(bulk):
        return 1.0
    gm = np.sqrt(inner[bulk] * outer[bulk])
    return float(np.sqrt(gm.min() * gm.max()))


def _radial_gauge(radius: float, n_cells: int) -> np.ndarray:
    return np.repeat(radius ** np.arange(n_cells, dtype=float), 4)


def obc_eigensystem(params: ModelParams) -> BiorthogonalEigensystem:
    """Biorthogonal eigensystem of the open chain, solved in the skin gauge."""
    H = build_real_space(params, "open")
    r = skin_gauge_radius(params)
    gauge = None if r == 1.0 else _radial_gauge(r, params.n_cells)
    return biorthogonal_eigensystem(H, gauge=gauge)


def obc_spectrum(params: ModelParams, target_growth: float = 1e3) -> np.ndarray:
    """Open-chain eigenvalues, accurate also for long strongly non-normal chains.

    A single similarity gauge cannot flatten every mode when the GBZ radii
    spread widely. The chain is therefore solved in several radial gauges
    whose radii cover the GBZ range with at most ``target_growth`` amplitude
    variation per mode; each eigenvalue is taken from the gauge where its
    condition number is smallest.
    """
    H = build_real_space(params, "open")
    n = params.n_cells
    if params.is_hermitian:
        return np.sort(np.linalg.eigvalsh(H)).astype(complex)
    rough = np.linalg.eigvals(H)
    roots = np.abs(characteristic_beta_roots(params, rough))
    mids = roots[:, 1:3]
    mids = mids[mids[:, 1] < 4.0 * mids[:, 0]]
    if mids.size == 0:
        return _sort_complex(rough)
    lo, hi = mids.min(), mids.max()
    m = max(1, int(np.ceil(n * np.log(hi / lo) / np.log(target_growth))))
    values, kappas = [], []
    for radius in np.geomspace(lo, hi, m + 1):
        s = _radial_gauge(radius, n)
        E, R = np.linalg.eig(H * s[None, :] / s[:, None])
        L = np.linalg.inv(R)
        kappa = np.linalg.norm(L, axis=1) * np.linalg.norm(R, axis=0) / np.abs(np.sum(L.T * R, axis=0))
        values.append(E.astype(complex))
        kappas.append(kappa)
    # start from the best-conditioned gauge and swap in better estimates mode by mode
    ref = int(np.argmin([np.median(k) for k in kappas]))
    E_best, k_best = values[ref].copy(), kappas[ref].copy()
    for g in range(len(values)):
        if g == ref:
            continue
        _, col = linear_sum_assignment(np.abs(E_best[:, None] - values[g][None, :]))
        better = kappas[g][col] < k_best
        E_best[better] = values[g][col][better]
        k_best[better] = kappas[g][col][better]
    return _sort_complex(E_best)


def _sort_complex(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=complex)
    return E[np.lexsort((np.round(E.imag, 12), np.round(E.real, 12)))]


# ---------------------------------------------------------------------------
# Bloch bands


@dataclass(frozen=True)
class BandStructure:
    """Continuity-sorted Bloch bands.

    Attributes
    ----------
    k_grid : ndarray, shape (nk,)
    energies : ndarray, shape (4, nk)
        ``energies[n, i]`` is band ``n`` at ``k_grid[i]``.
    right : ndarray, shape (nk, 4, 4)
        ``right[i][:, n]`` is the unit-norm right eigenvector of band ``n``.
    left : ndarray, shape (nk, 4, 4)
        ``left[i][n]`` is the left row vector with ``left[i] @ right[i] = I``.
    """

    k_grid: np.ndarray
    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @property
    def n_bands(self) -> int:
        return self.energies.shape[0]


def _bloch_eig(params: ModelParams, k_grid: np.ndarray):
    Hk = build_bloch(params, k_grid)
    E, R = np.linalg.eig(Hk)
    R = R / np.linalg.norm(R, axis=1)[:, None, :]
    L = np.linalg.inv(R)
    return E, R, L


def pbc_bands(params: ModelParams, k_count: int = 201, reference_k: float = 0.0) -> BandStructure:
    """Bands on ``k_count`` points of ``[-pi, pi]`` including both ends.

    At the grid point nearest ``reference_k`` the bands are ordered by real
    part, then imaginary part. The labels are carried to the other points in
    both directions by maximal eigenvector overlap between neighbours. The
    default reference ``k = 0`` avoids the zone boundary, where the bands
    meet in Kramers-like pairs and the ordering would be ambiguous.
    """
    if k_count < 8:
        raise InvalidArgument(f"k_count must be at least 8, got {k_count}")
    ks = np.linspace(-np.pi, np.pi, k_count)
    E, R, L = _bloch_eig(params, ks)
    i0 = int(np.argmin(np.abs(ks - reference_k)))
    order = np.lexsort((np.round(E[i0].imag, 12), np.round(E[i0].real, 12)))
    E[i0], R[i0], L[i0] = E[i0][order], R[i0][:, order], L[i0][order]
    for i in list(range(i0 + 1, k_count)) + list(range(i0 - 1, -1, -1)):
        j = i - 1 if i > i0 else i + 1
        overlap = np.abs(R[j].conj().T @ R[i])
        _, col = linear_sum_assignment(-overlap)
        E[i], R[i], L[i] = E[i][col], R[i][:, col], L[i][col]
    return BandStructure(k_grid=ks, energies=E.T.copy(), right=R, left=L)


# ---------------------------------------------------------------------------
# topological invariants


@dataclass(frozen=True)
class ZakPhase:
    """Complex Zak phases reduced to ``[0, 2 pi)``.

    ``total_occupied`` is ``nan`` when the real-part line gap between the two
    lower and two upper bands closes.
    """

    per_band: np.ndarray
    total_occupied: float
    gapless: bool
    min_gap: float


def complex_zak_phase(params: ModelParams, k_count: int = 256) -> ZakPhase:
    """Discretized biorthogonal Wilson loop around the Brillouin zone.

    Bands are ordered by real part at every ``k``; the two lower ones are
    occupied. The per-band value uses single-state links
    ``<L_n(k_i)|R_n(k_i+1)>``, the occupied total uses the determinant of the
    2 x 2 link matrices, which stays well defined where the two occupied
    bands touch.
    """
    if k_count < 64:
        raise InvalidArgument(f"k_count must be at least 64, got {k_count}")
    ks = np.linspace(-np.pi, np.pi, k_count, endpoint=False)
    E, R, L = _bloch_eig(params, ks)
    order = np.argsort(E.real, axis=1, kind="stable")
    E = np.take_along_axis(E, order, axis=1)
    R = np.take_along_axis(R, order[:, None, :], axis=2)
    L = np.take_along_axis(L, order[:, :, None], axis=1)
    nxt = np.roll(np.arange(k_count), -1)
    links = L @ R[nxt]  # links[i] = <L(k_i)|R(k_{i+1})>
    diag = np.diagonal(links, axis1=1, axis2=2)
    per_band = np.mod(-np.angle(np.prod(diag / np.abs(diag), axis=0)), 2 * np.pi)
    gap = float((E[:, 2].real - E[:, 1].real).min())
    gapless = gap < GAPLESS_TOL
    if gapless:
        total = float("nan")
    else:
        dets = np.linalg.det(links[:, :2, :2])
        total = float(np.mod(-np.angle(np.prod(dets / np.abs(dets))), 2 * np.pi))
    return ZakPhase(per_band=per_band, total_occupied=total, gapless=gapless, min_gap=gap)


def spectrum_distance(params: ModelParams, E_ref: complex, k_count: int = 512) -> float:
    """Distance from ``E_ref`` to the Bloch spectrum, refined between grid points."""
    from scipy.optimize import minimize_scalar

    ks = np.linspace(-np.pi, np.pi, k_count + 1)
    dist = np.abs(np.linalg.eigvals(build_bloch(params, ks)) - E_ref).min(axis=1)
    h = ks[1] - ks[0]

    def f(k):
        return np.abs(np.linalg.eigvals(build_bloch(params, k)) - E_ref).min()

    best = dist.min()
    for i in np.argsort(dist)[:4]:
        res = minimize_scalar(f, bounds=(ks[i] - h, ks[i] + h), method="bounded", options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    return float(best)


def energy_winding(
    params: ModelParams,
    E_ref: complex,
    k_count: int = 256,
    max_refinements: int = 8,
    spectrum_tol: float = 1e-6,
) -> int:
    """Winding number of ``det(H(k) - E_ref)`` around ``E_ref``.

    The loop is traversed with ``k`` running from ``pi`` down to ``-pi``,
    i.e. along ``beta = exp(-ik)``. With this orientation a winding of ``-1``
    accompanies modes piling up at the left end of the open chain.

    The grid is doubled until two consecutive grids agree on the rounded
    integer and no phase step exceeds ``pi / 2``.

    Raises
    ------
    InvalidArgument
        ``E_ref`` is within ``spectrum_tol * max(1, |E_ref|)`` of the spectrum.
    NumericalFailure
        The count did not stabilize within ``max_refinements`` doublings.
    """
    E_ref = complex(E_ref)
    dist = spectrum_distance(params, E_ref)
    if dist < spectrum_tol * max(1.0, abs(E_ref)):
        raise InvalidArgument(f"E_ref={E_ref} lies on the Bloch spectrum (distance {dist:.2e})")
    previous = None
    n = k_count
    for _ in range(max_refinements + 1):
        ks = np.linspace(np.pi, -np.pi, n + 1)
        d = np.linalg.det(build_bloch(params, ks) - E_ref * np.eye(4))
        steps = np.angle(d[1:] / d[:-1])
        total = steps.sum() / (2 * np.pi)
        w = int(np.rint(total))
        smooth = np.abs(steps).max() < np.pi / 2
        if smooth and abs(total - w) < 1e-3 and previous == w:
            return w
        previous = w if smooth else None
        n *= 2
    raise NumericalFailure(f"winding number did not converge for E_ref={E_ref}")


def energy_windings(params: ModelParams, refs, k_count: int = 1024, spectrum_tol: float = 1e-6) -> np.ndarray:
    """``energy_winding`` for many reference energies at once.

    All references share one ``k`` grid; a reference whose phase steps are
    not small on that grid is handed to ``energy_winding``. References on
    the spectrum give ``nan``.
    """
    refs = np.atleast_1d(np.asarray(refs, dtype=complex))
    ks = np.linspace(np.pi, -np.pi, k_count + 1)
    E = np.linalg.eigvals(build_bloch(params, ks))  # (nk, 4)
    diff = E[:, :, None] - refs[None, None, :]
    d = np.prod(diff, axis=1)  # det(H(k) - E_ref) as a product over bands
    steps = np.angle(d[1:] / d[:-1])
    out = np.rint(steps.sum(axis=0) / (2 * np.pi))
    near = np.abs(diff).min(axis=(0, 1)) < spectrum_tol * np.maximum(1.0, np.abs(refs))
    rough = np.abs(steps).max(axis=0) >= np.pi / 4
    out[near] = np.nan
    for i in np.flatnonzero(rough & ~near):
        try:
            out[i] = energy_winding(params, refs[i], spectrum_tol=spectrum_tol)
        except InvalidArgument:
            out[i] = np.nan
    return out


def kramers_gap(params: ModelParams, k: float = np.pi) -> float:
    """Largest splitting of the paired band values at ``+k`` and ``-k``.

    The four eigenvalues at a given momentum are sorted by real part and the
    differences within the lower and upper pairs are taken; the same is done
    for the imaginary parts. At the zone boundary both kinds of pair are
    degenerate.
    """
    gaps = []
    for kk in (k, -k):
        E = np.linalg.eigvals(build_bloch(params, kk))
        re = np.sort(E.real)
        im = np.sort(E.imag)
        gaps += [re[1] - re[0], re[3] - re[2], im[1] - im[0], im[3] - im[2]]
    return float(max(gaps))


# ---------------------------------------------------------------------------
# open-chain mode classification


@dataclass(frozen=True)
class ModeClassification:
    """Per-mode labels (``edge``, ``skin`` or ``bulk``), centre of mass and IPR."""

    labels: np.ndarray
    center_of_mass: np.ndarray
    ipr: np.ndarray
    ipr_threshold: float

    def count(self, label: str) -> int:
        return int(np.sum(self.labels == label))


@dataclass(frozen=True)
class ObcAnalysis:
    params: ModelParams
    eigensystem: BiorthogonalEigensystem
    classification: ModeClassification


def _profile_stats(R: np.ndarray):
    w = np.abs(R) ** 2
    w = w / w.sum(axis=0)
    sites = np.arange(R.shape[0])
    return w, sites @ w, np.sum(w**2, axis=0)


def classify_modes(params: ModelParams, eigensystem: BiorthogonalEigensystem) -> ModeClassification:
    """Label OBC modes as edge, skin or bulk.

    Edge modes sit at zero energy (``|E| < ZERO_MODE_TOL * spectral radius``)
    with more than ``EDGE_WEIGHT`` of their weight in the outer
    ``EDGE_FRACTION`` of cells on either side. The remaining modes count as
    skin modes when their IPR exceeds twice the largest bulk IPR of the
    Hermitian chain with ``t3 = t4 = (t3 + t4) / 2``.
    """
    E = eigensystem.eigenvalues
    w, com, ipr = _profile_stats(eigensystem.right)
    n_sites = w.shape[0]
    edge_sites = 4 * max(1, int(round(EDGE_FRACTION * params.n_cells)))
    boundary = w[:edge_sites].sum(axis=0) + w[n_sites - edge_sites:].sum(axis=0)
    rho = np.abs(E).max()
    edge = (np.abs(E) < ZERO_MODE_TOL * rho) & (boundary > EDGE_WEIGHT)

    mean = 0.5 * (params.t3 + params.t4)
    ref = params.replace(t3=mean, t4=mean)
    Eh, Rh = np.linalg.eigh(build_real_space(ref))
    wh, _, ipr_h = _profile_stats(Rh)
    bh = wh[:edge_sites].sum(axis=0) + wh[n_sites - edge_sites:].sum(axis=0)
    ref_edge = (np.abs(Eh) < ZERO_MODE_TOL * np.abs(Eh).max()) & (bh > EDGE_WEIGHT)
    threshold = 2.0 * ipr_h[~ref_edge].max()

    labels = np.where(edge, "edge", np.where(ipr > threshold, "skin", "bulk"))
    if params.is_hermitian:
        labels = np.where(edge, "edge", "bulk")
    return ModeClassification(labels=labels.astype(object), center_of_mass=com, ipr=ipr, ipr_threshold=threshold)


def obc_analysis(params: ModelParams) -> ObcAnalysis:
    """Open-chain eigensystem plus mode classification."""
    es = obc_eigensystem(params)
    return ObcAnalysis(params=params, eigensystem=es, classification=classify_modes(params, es))
