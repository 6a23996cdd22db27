"""Generalized Brillouin zone, saddle points and GBZ contour integrals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AccuracyWarning, InvalidArgument, NumericalFailure, UnsupportedBipolar
from .model import ModelParams, build_non_bloch, build_real_space
from .polynomial import (
    bivariate_coefficients,
    characteristic_beta_roots,
    evaluate_bivariate,
)
from .spectral import obc_spectrum

__all__ = [
    "GBZCurve",
    "SaddleList",
    "SaddlePoint",
    "boundary_correction_estimate",
    "characteristic_beta_roots",
    "compute_gbz",
    "green_element",
    "lyapunov_zero_drift",
    "nhse_direction",
    "real_axis_intersections",
    "saddle_points",
]

EDGE_SPLIT = 0.25
EQUAL_MODULUS_TOL = 1e-3
EQUAL_MODULUS_REF_CELLS = 40
DIRECTION_TOL = 1e-6


# ---------------------------------------------------------------------------
# GBZ curve


@dataclass(frozen=True)
class GBZCurve:
    """GBZ points ordered by ``arg(beta)``.

    Each bulk OBC eigenvalue contributes its two middle-modulus roots. Modes
    whose middle roots differ in modulus by more than ``EDGE_SPLIT`` (zero
    energy edge modes) are left out.

    Attributes
    ----------
    beta, energy : ndarray
        Point coordinates and the OBC eigenvalue they came from.
    source_mode : ndarray of int
        Index into ``obc_energies``.
    branch : ndarray of int
        0 for the inner loop, 1 for the outer loop (local radius comparison).
    split : ndarray
        ``|beta_3| / |beta_2| - 1`` of the source mode.
    equal_modulus : ndarray of bool
        ``split`` below the size-scaled tolerance ``split_tol``.
    collapsed : ndarray of bool
        The polynomial lost degree at the source energy.
    self_intersections : ndarray
        Points where the two loops cross.
    obc_energies : ndarray
        Full open-chain spectrum the curve was built from.
    """

    params: ModelParams
    beta: np.ndarray
    energy: np.ndarray
    source_mode: np.ndarray
    branch: np.ndarray
    split: np.ndarray
    equal_modulus: np.ndarray
    collapsed: np.ndarray
    self_intersections: np.ndarray
    obc_energies: np.ndarray
    split_tol: float
    excluded_modes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return self.beta.size

    @property
    def points(self) -> list[dict]:
        return [
            {"beta": complex(b), "energy": complex(e), "source_mode": int(m)}
            for b, e, m in zip(self.beta, self.energy, self.source_mode)
        ]

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.collapsed))

    def loop(self, branch: int) -> np.ndarray:
        """Points of one loop, ordered by ``arg(beta)``."""
        return self.beta[self.branch == branch]


def compute_gbz(params: ModelParams, n_cells: int | None = None, energies: np.ndarray | None = None) -> GBZCurve:
    """GBZ from the open-chain spectrum of ``n_cells`` cells.

    Parameters
    ----------
    params : ModelParams
    n_cells : int, optional
        Overrides ``params.n_cells``; must be at least 20.
    energies : ndarray, optional
        Precomputed OBC eigenvalues for the same size.
    """
    if n_cells is not None:
        params = params.replace(n_cells=n_cells)
    if params.n_cells < 20:
        raise InvalidArgument(f"n_cells must be at least 20, got {params.n_cells}")
    if energies is None:
        energies = obc_spectrum(params)
    energies = np.asarray(energies, dtype=complex)
    roots, collapsed = characteristic_beta_roots(params, energies, return_collapse=True)
    mid = roots[:, 1:3]
    with np.errstate(invalid="ignore", divide="ignore"):
        split = np.abs(mid[:, 1]) / np.abs(mid[:, 0]) - 1.0
    keep = np.isfinite(split) & (split < EDGE_SPLIT)
    modes = np.flatnonzero(keep)
    beta = mid[keep].reshape(-1)
    src = np.repeat(modes, 2)
    order = np.argsort(np.angle(beta), kind="stable")
    beta, src = beta[order], src[order]
    split_tol = EQUAL_MODULUS_TOL * EQUAL_MODULUS_REF_CELLS / params.n_cells
    curve_split = split[src]
    branch = _assign_branches(beta)
    crossings = real_axis_intersections(params, np.abs(beta).min(), np.abs(beta).max()) if beta.size else np.zeros(0)
    crossings = _confirm_crossings(crossings, beta, branch)
    return GBZCurve(
        params=params,
        beta=beta,
        energy=energies[src],
        source_mode=src,
        branch=branch,
        split=curve_split,
        equal_modulus=curve_split < split_tol,
        collapsed=collapsed[src],
        self_intersections=crossings,
        obc_energies=energies,
        split_tol=split_tol,
        excluded_modes=np.flatnonzero(~keep),
    )


def _assign_branches(beta: np.ndarray, window: int = 12) -> np.ndarray:
    """Tag each point as inner (0) or outer (1) loop.

    A point is inner when its log radius lies below the median of its
    ``2 * window`` nearest neighbours in angle (circularly).
    """
    n = beta.size
    if n == 0:
        return np.zeros(0, dtype=int)
    logr = np.log(np.abs(beta))
    w = min(window, max(1, (n - 1) // 2))
    idx = (np.arange(n)[:, None] + np.arange(-w, w + 1)[None, :]) % n
    local = np.median(logr[idx], axis=1)
    return (logr > local).astype(int)


def real_axis_intersections(params: ModelParams, r_min: float, r_max: float, samples: int = 400) -> np.ndarray:
    """Negative real ``beta`` where the middle roots have equal modulus.

    For ``beta = -b`` the matrix ``H(beta)`` is real, so its eigenvalues come
    in conjugate pairs that share ``-b`` as a root. When ``-b`` is one of the
    two middle roots and the other middle root has modulus ``b``, two
    distinct energies place a GBZ point at ``-b``: the loops cross there.
    """
    lo, hi = 0.8 * r_min, 1.25 * r_max

    def g(b):
        E = np.linalg.eigvals(build_non_bloch(params, -b))[0]
        r = characteristic_beta_roots(params, E)
        i = int(np.argmin(np.abs(r + b)))
        if i not in (1, 2):
            return np.nan
        return np.log(np.abs(r[3 - i])) - np.log(b)

    bs = np.geomspace(lo, hi, samples)
    gs = np.array([g(b) for b in bs])
    found = []
    for a in range(samples - 1):
        ga, gb = gs[a], gs[a + 1]
        if np.isfinite(ga) and np.isfinite(gb) and (ga == 0 or ga * gb < 0):
            b0 = brentq(g, bs[a], bs[a + 1], xtol=1e-14, rtol=1e-14) if ga != 0 else bs[a]
            found.append(-b0 + 0j)
    return np.array(found, dtype=complex)


def _confirm_crossings(candidates: np.ndarray, beta: np.ndarray, branch: np.ndarray) -> np.ndarray:
    """Keep candidates that have curve points of both loops nearby."""
    if beta.size == 0 or candidates.size == 0:
        return np.zeros(0, dtype=complex)
    spacing = np.median(np.abs(np.diff(beta))) if beta.size > 1 else 1.0
    radius = max(10 * spacing, 0.05 * np.abs(candidates).max())
    kept = []
    for c in candidates:
        near = np.abs(beta - c) < radius
        if np.any(near & (branch == 0)) and np.any(near & (branch == 1)):
            kept.append(c)
    return np.array(kept, dtype=complex)


def nhse_direction(curve: GBZCurve, tol: float = DIRECTION_TOL) -> str:
    """``'left'``, ``'right'`` or ``'none'`` from the GBZ radii.

    Raises
    ------
    UnsupportedBipolar
        Points lie both inside and outside the unit circle.
    """
    if len(curve) == 0:
        raise InvalidArgument("empty GBZ curve")
    r = np.abs(curve.beta)
    if np.abs(r - 1).max() <= tol:
        return "none"
    if r.max() < 1 - tol:
        return "left"
    if r.min() > 1 + tol:
        return "right"
    raise UnsupportedBipolar(f"GBZ radii span [{r.min():.4g}, {r.max():.4g}] across the unit circle")


# ---------------------------------------------------------------------------
# saddle points


@dataclass(frozen=True)
class SaddlePoint:
    """Stationary point ``dE/dk = 0`` of an analytically continued band.

    ``on_gbz`` marks saddles whose double root is the middle root pair, i.e.
    branch points of the open-chain continuum spectrum.
    """

    k_s: complex
    energy: complex
    band: int
    beta: complex
    on_gbz: bool
    dE_dk: complex


class SaddleList(list):
    """List of saddle points with search diagnostics.

    ``crossings`` holds solutions of ``P = dP/dbeta = 0`` at which
    ``dP/dE`` vanishes as well. There two bands touch (the glide-time
    degeneracy on the negative real ``beta`` axis is one such place), the
    bands cross linearly and ``dE/dk`` is not zero, so they are not saddles.
    """

    def __init__(self, *args):
        super().__init__(*args)
        self.seeds = 0
        self.converged = 0
        self.crossings: list[tuple[complex, complex]] = []

    @property
    def diagnostic(self) -> str:
        return (f"{len(self)} saddles and {len(self.crossings)} band crossings from "
                f"{self.converged} converged of {self.seeds} seeds")


def saddle_points(
    params: ModelParams,
    beta_range: tuple[float, float] | None = None,
    grid: tuple[int, int] = (64, 32),
    tol: float = 1e-10,
    merge: float = 1e-6,
) -> SaddleList:
    """Find complex momenta where ``dE/dk = 0``.

    A saddle of the band ``E(k)`` with ``beta = exp(ik)`` is a double root of
    ``P(beta, E)`` in ``beta``, so Newton iterations are run on the pair
    ``P = 0``, ``dP/dbeta = 0`` in the unknowns ``(beta, E)``. Seeds cover
    ``Re k`` in ``[-pi, pi)`` and ``Im k`` across ``-log`` of ``beta_range``
    (default: the GBZ radius range widened by 25 %), each paired with the
    four eigenvalues of ``H(beta)``.
    """
    C = bivariate_coefficients(params)
    if beta_range is None:
        curve = compute_gbz(params)
        r = np.abs(curve.beta)
        beta_range = (r.min(), r.max())
    lo, hi = beta_range
    span = np.log(hi) - np.log(lo)
    ki = np.linspace(-np.log(hi) - 0.25 * span - 0.05, -np.log(lo) + 0.25 * span + 0.05, grid[1])
    kr = np.linspace(-np.pi, np.pi, grid[0], endpoint=False)
    k0 = (kr[:, None] + 1j * ki[None, :]).reshape(-1)
    b0 = np.exp(1j * k0)
    e0 = np.linalg.eigvals(build_non_bloch(params, b0))
    b = np.repeat(b0, 4)
    e = e0.reshape(-1)

    active = np.ones(b.size, dtype=bool)
    for _ in range(60):
        Pb = evaluate_bivariate(C, b, e, d_beta=1)
        F0 = evaluate_bivariate(C, b, e)
        Pe = evaluate_bivariate(C, b, e, d_energy=1)
        Pbb = evaluate_bivariate(C, b, e, d_beta=2)
        Pbe = evaluate_bivariate(C, b, e, d_beta=1, d_energy=1)
        det = Pb * Pbe - Pe * Pbb
        with np.errstate(all="ignore"):
            db = -(Pbe * F0 - Pe * Pb) / det
            de = -(-Pbb * F0 + Pb * Pb) / det
        ok = np.isfinite(db) & np.isfinite(de) & active
        b = np.where(ok, b + db, b)
        e = np.where(ok, e + de, e)
        active = ok & (np.abs(db) + np.abs(de) > 1e-15 * (1 + np.abs(b) + np.abs(e)))
        if not np.any(active):
            break

    with np.errstate(all="ignore"):
        res = np.abs(evaluate_bivariate(C, b, e)) + np.abs(evaluate_bivariate(C, b, e, d_beta=1))
        scale = np.abs(C).max() * (1 + np.abs(b)) ** 4 * (1 + np.abs(e)) ** 4
        good = np.isfinite(res) & (res < tol * scale) & (np.abs(b) > 1e-6) & (np.abs(b) < 1e6)

    out = SaddleList()
    out.seeds = int(b.size)
    out.converged = int(good.sum())
    found_b: list[complex] = []
    found_e: list[complex] = []
    for bb, ee in zip(b[good], e[good]):
        if any(abs(bb - fb) < merge and abs(ee - fe) < merge for fb, fe in zip(found_b, found_e)):
            continue
        found_b.append(bb)
        found_e.append(ee)
    for bb, ee in zip(found_b, found_e):
        rec = None if _is_crossing(C, bb, ee) else _saddle_record(params, C, bb, ee)
        if rec is None or not abs(rec.dE_dk) < 1e-8 * (1 + abs(ee)):
            out.crossings.append((complex(bb), complex(ee)))
        else:
            out.append(rec)
    return out


def _is_crossing(C: np.ndarray, b: complex, e: complex, tol: float = 1e-3) -> bool:
    """True where ``dP/dE`` also vanishes: two bands cross and ``E(k)`` has no saddle."""
    j = np.arange(C.shape[0])[:, None]
    m = np.arange(C.shape[1])[None, :]
    scale = np.sum(np.abs(C) * m * abs(b) ** j * abs(e) ** np.clip(m - 1, 0, None))
    Pe = evaluate_bivariate(C, b, e, d_energy=1)
    return bool(abs(Pe) < tol * scale)


def _saddle_record(params: ModelParams, C: np.ndarray, b: complex, e: complex) -> SaddlePoint:
    roots = characteristic_beta_roots(params, e)
    nearest = np.argsort(np.abs(roots - b))[:2]
    on_gbz = sorted(nearest.tolist()) == [1, 2]
    Pb = evaluate_bivariate(C, b, e, d_beta=1)
    Pe = evaluate_bivariate(C, b, e, d_energy=1)
    dE_dk = complex(-1j * b * Pb / Pe) if Pe != 0 else complex("nan")
    ev = np.linalg.eigvals(build_non_bloch(params, b))
    ev = ev[np.argsort(ev.real, kind="stable")]
    band = int(np.argmin(np.abs(ev - e)))
    return SaddlePoint(
        k_s=complex(-1j * np.log(b)), energy=complex(e), band=band, beta=complex(b), on_gbz=on_gbz, dE_dk=dE_dk
    )


def lyapunov_zero_drift(params: ModelParams, saddles: list[SaddlePoint] | None = None) -> float:
    """``lambda(0) = max Im E(k_s)`` over the GBZ saddles.

    At zero drift velocity the Lyapunov exponent reduces to the imaginary
    part of the dominant saddle energy. Only saddles that are branch points
    of the open-chain spectrum (``on_gbz``) are eligible.
    """
    if saddles is None:
        saddles = saddle_points(params)
    eligible = [s for s in saddles if s.on_gbz]
    if not eligible:
        diag = getattr(saddles, "diagnostic", f"{len(saddles)} saddles")
        raise NumericalFailure(f"no GBZ saddle point found ({diag})")
    return float(max(s.energy.imag for s in eligible))


# ---------------------------------------------------------------------------
# Green's function


def _fit_loop(points: np.ndarray, n_fourier: int) -> np.ndarray:
    """Least-squares Fourier coefficients of ``log|beta|`` against ``arg(beta)``."""
    K = np.arange(-n_fourier, n_fourier + 1)
    A = np.exp(1j * np.outer(np.angle(points), K))
    coef, *_ = np.linalg.lstsq(A, np.log(np.abs(points)).astype(complex), rcond=None)
    return coef


def _loop_nodes(coef: np.ndarray, n_quad: int):
    n_fourier = (coef.size - 1) // 2
    K = np.arange(-n_fourier, n_fourier + 1)
    phi = 2 * np.pi * np.arange(n_quad) / n_quad
    basis = np.exp(1j * np.outer(phi, K))
    logr = (basis @ coef).real
    dlogr = (basis @ (1j * K * coef)).real
    return np.exp(logr + 1j * phi), dlogr


def _roots_inside(params: ModelParams, omega: complex, beta: np.ndarray, dlogr: np.ndarray) -> float:
    """Argument-principle count of roots of ``P(., omega)`` inside the loop."""
    C = bivariate_coefficients(params)
    P = evaluate_bivariate(C, beta, np.full(beta.shape, omega))
    Pb = evaluate_bivariate(C, beta, np.full(beta.shape, omega), d_beta=1)
    # dbeta = beta (dlogr + i) dphi
    integrand = Pb / P * beta * (dlogr + 1j)
    return float((integrand.mean() / 1j).real)


def boundary_correction_estimate(params: ModelParams, omega: complex, i: int, j: int, n_cells: int | None = None) -> float:
    """Rough size of boundary reflections in ``G_ij`` relative to the bulk value.

    Waves reflected at a chain end decay by ``|beta_2| / |beta_3|`` per cell,
    evaluated at ``omega``, over the distance from the sites to that end.
    """
    n = params.n_cells if n_cells is None else n_cells
    r = np.abs(characteristic_beta_roots(params, omega))
    ratio = r[1] / r[2]
    ci, cj = i // 4, j // 4
    dist = min(ci, cj, n - 1 - ci, n - 1 - cj) + 1
    return float(ratio**dist)


def green_element(
    params: ModelParams,
    omega: complex,
    i: int,
    j: int,
    n_cells: int | None = None,
    method: str = "contour",
    curve: GBZCurve | None = None,
    n_quad: int = 1024,
    n_fourier: int = 12,
    spectrum_tol: float = 1e-8,
) -> complex:
    """Element ``(i, j)`` of ``(omega - H_OBC)^-1``.

    ``method='resolvent'`` solves the open-chain linear system directly.
    ``method='contour'`` evaluates the GBZ integral

        G_ij = oint dbeta / (2 pi i beta) beta**(m - n) [(omega - H(beta))^-1]_{ab}

    with ``i = 4 m + a`` and ``j = 4 n + b``. Each GBZ loop is replaced by a
    smooth curve through its points (Fourier series of ``log|beta|`` in
    ``arg(beta)``) and integrated with the periodic trapezoid rule; the
    values of the two loops are averaged. The result is the bulk Green's
    function, which matches the open chain up to boundary reflections of
    size ``boundary_correction_estimate``.
    """
    if n_cells is not None:
        params = params.replace(n_cells=n_cells)
    n_sites = params.n_sites
    if not (0 <= i < n_sites and 0 <= j < n_sites):
        raise InvalidArgument(f"site indices must lie in [0, {n_sites}), got {i}, {j}")
    omega = complex(omega)
    energies = curve.obc_energies if curve is not None else obc_spectrum(params)
    rho = max(1.0, np.abs(energies).max())
    if np.abs(energies - omega).min() < spectrum_tol * rho:
        raise InvalidArgument(f"omega={omega} lies on the open-chain spectrum")

    if method == "resolvent":
        H = build_real_space(params)
        rhs = np.zeros(n_sites, dtype=complex)
        rhs[j] = 1.0
        return complex(np.linalg.solve(omega * np.eye(n_sites) - H, rhs)[i])
    if method != "contour":
        raise InvalidArgument(f"method must be 'contour' or 'resolvent', got {method!r}")

    if curve is None:
        curve = compute_gbz(params, energies=energies)
    if curve.flagged:
        raise NumericalFailure("GBZ curve has degree-collapsed points")
    m, a = divmod(i, 4)
    n, b = divmod(j, 4)
    values = []
    for branch in (0, 1):
        pts = curve.loop(branch)
        if pts.size < 2 * n_fourier + 1:
            raise NumericalFailure(f"GBZ loop {branch} has too few points ({pts.size}) for the contour fit")
        beta, dlogr = _loop_nodes(_fit_loop(pts, n_fourier), n_quad)
        inside = _roots_inside(params, omega, beta, dlogr)
        if abs(inside - 2) > 1e-3:
            raise NumericalFailure(f"GBZ contour encloses {inside:.3f} roots at omega={omega}, expected 2")
        Mb = np.linalg.inv(omega * np.eye(4) - build_non_bloch(params, beta))
        integrand = (1 - 1j * dlogr) * beta ** (m - n) * Mb[:, a, b]
        values.append(integrand.mean())
    if abs(values[0] - values[1]) > 1e-6 * max(abs(values[0]), 1e-300):
        warnings.warn("GBZ loops give different contour values", AccuracyWarning, stacklevel=2)
    return complex(0.5 * (values[0] + values[1]))
