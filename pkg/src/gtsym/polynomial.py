"""Characteristic polynomial of the non-Bloch matrix in ``beta`` and ``E``.

``P(beta, E) = beta**CLEARING_POWER * det(H(beta) - E)`` is a polynomial of
degree ``DEGREE`` in ``beta`` because the hopping range is one cell. Its
coefficients are obtained by sampling the determinant on roots of unity and
inverting the resulting Vandermonde (DFT) system; sampling at
``2 * DEGREE + 1`` points lets us assert that the top coefficients vanish.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalFailure
from .model import ModelParams, build_non_bloch

__all__ = [
    "CLEARING_POWER",
    "DEGREE",
    "bivariate_coefficients",
    "characteristic_beta_roots",
    "characteristic_coefficients",
    "evaluate_bivariate",
]

HOPPING_RANGE = 1
CLEARING_POWER = 2  # rank of h_minus bounds the power of 1/beta in det(H(beta) - E)
DEGREE = 4 * HOPPING_RANGE
_N_SAMPLES = 2 * DEGREE + 1
_COLLAPSE_TOL = 1e-12
_EXCESS_TOL = 1e-9


def _samples(n: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(n) / n)


def characteristic_coefficients(params: ModelParams, E) -> np.ndarray:
    """Coefficients ``c_j`` of ``P(beta, E) = sum_j c_j beta**j``, ascending in ``j``.

    ``E`` may be scalar or 1-D; the result has shape ``E.shape + (DEGREE + 1,)``.
    """
    E = np.asarray(E, dtype=complex)
    flat = E.reshape(-1)
    betas = _samples(_N_SAMPLES)
    Hb = build_non_bloch(params, betas)  # (S, 4, 4)
    M = Hb[None, :, :, :] - flat[:, None, None, None] * np.eye(4)
    vals = np.linalg.det(M) * betas[None, :] ** CLEARING_POWER
    coef = np.fft.fft(vals, axis=1) / _N_SAMPLES  # DFT inverts the Vandermonde system on roots of unity
    scale = np.abs(coef).max(axis=1)
    excess = np.abs(coef[:, DEGREE + 1:]).max(axis=1)
    if np.any(excess > _EXCESS_TOL * np.maximum(scale, 1.0)):
        raise NumericalFailure("characteristic polynomial has terms beyond the declared degree")
    return coef[:, : DEGREE + 1].reshape(E.shape + (DEGREE + 1,))


def characteristic_beta_roots(params: ModelParams, E, return_collapse: bool = False):
    """Roots in ``beta`` of ``P(beta, E)``, sorted by ascending modulus.

    Parameters
    ----------
    params : ModelParams
    E : complex or array_like
        Energy or 1-D array of energies.
    return_collapse : bool
        Also return a boolean flag per energy that is true when the leading
        coefficient vanished. Lost roots are reported as ``inf``.

    Returns
    -------
    roots : ndarray
        Shape ``E.shape + (DEGREE,)``.
    """
    E = np.asarray(E, dtype=complex)
    coef = characteristic_coefficients(params, E.reshape(-1))
    roots, collapse = _roots_batch(coef)
    roots = roots.reshape(E.shape + (DEGREE,))
    collapse = collapse.reshape(E.shape)
    if return_collapse:
        return roots, collapse
    return roots


def _roots_batch(coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, deg1 = coef.shape
    deg = deg1 - 1
    lead = coef[:, -1]
    scale = np.abs(coef).max(axis=1)
    collapse = np.abs(lead) <= _COLLAPSE_TOL * scale
    roots = np.full((m, deg), np.inf + 0j)
    ok = ~collapse
    if np.any(ok):
        c = coef[ok] / lead[ok, None]
        comp = np.zeros((c.shape[0], deg, deg), dtype=complex)
        comp[:, 0, :] = -c[:, -2::-1]
        comp[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
        roots[ok] = np.linalg.eigvals(comp)
    for i in np.flatnonzero(collapse):
        r = np.roots(coef[i, ::-1])
        roots[i, : r.size] = r
    order = np.argsort(np.abs(roots), axis=1, kind="stable")
    return np.take_along_axis(roots, order, axis=1), collapse


def bivariate_coefficients(params: ModelParams) -> np.ndarray:
    """Array ``C`` with ``P(beta, E) = sum_{j, m} C[j, m] beta**j E**m``."""
    nb, ne = _N_SAMPLES, 5
    betas, energies = _samples(nb), _samples(ne)
    Hb = build_non_bloch(params, betas)
    M = Hb[:, None, :, :] - energies[None, :, None, None] * np.eye(4)
    vals = np.linalg.det(M) * betas[:, None] ** CLEARING_POWER
    C = np.fft.fft2(vals) / (nb * ne)
    return C[: DEGREE + 1]


def evaluate_bivariate(C: np.ndarray, beta, E, d_beta: int = 0, d_energy: int = 0):
    """Evaluate a partial derivative of ``P`` at arrays ``beta``, ``E``."""
    beta = np.asarray(beta, dtype=complex)
    E = np.asarray(E, dtype=complex)
    J = np.arange(C.shape[0])
    Mx = np.arange(C.shape[1])
    return np.einsum("...j,jm,...m->...", _powers(beta, J, d_beta), C, _powers(E, Mx, d_energy))


def _powers(x: np.ndarray, exps: np.ndarray, d: int) -> np.ndarray:
    """Rows of ``d``-th derivatives of ``x**exps``."""
    fac = np.ones(exps.shape, dtype=float)
    for q in range(d):
        fac = fac * (exps - q)
    shifted = np.clip(exps - d, 0, None)
    out = fac * x[..., None] ** shifted
    return np.where(exps >= d, out, 0.0)
