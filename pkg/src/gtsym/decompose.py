"""Mode decompositions of evolving states.

Three bases are offered: open-chain eigenmodes, non-Bloch modes on the GBZ
reached through a Z-transform, and Bloch modes on the Brillouin zone reached
through a Fourier transform. Weights are reported as a ``WeightField`` with
one row per time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dynamics import EvolutionGrid
from .errors import InvalidArgument
from .gbz import GBZCurve
from .model import build_non_bloch
from .spectral import BandStructure, BiorthogonalEigensystem

__all__ = [
    "NONBLOCH_MATCH_TOL",
    "WeightField",
    "bz_fourier_weights",
    "cell_z_transform",
    "group_velocity",
    "nonbloch_weights",
    "obc_mode_weights",
    "reconstruct_from_obc_weights",
    "z_transform",
]

NONBLOCH_MATCH_TOL = 1e-4  # relative to the spectral radius


@dataclass(frozen=True)
class WeightField:
    """Weights over a coordinate set, one row per time.

    Attributes
    ----------
    axis : {'obc_mode', 'gbz_beta', 'bz_k'}
    coordinates : ndarray
        Mode indices, GBZ momenta, or Bloch momenta.
    weights : ndarray
        ``(n_times, n_coordinates)`` for OBC modes; an extra trailing axis
        holds the branch (GBZ: negative then positive ``Re E``) or the band
        (Bloch).
    normalized_per_instant : bool
    times : ndarray
    excluded : ndarray of bool
        Coordinates left out of the normalization (failed matching).
    """

    axis: Literal["obc_mode", "gbz_beta", "bz_k"]
    coordinates: np.ndarray
    weights: np.ndarray
    normalized_per_instant: bool
    times: np.ndarray
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    energies: np.ndarray | None = None

    def magnitude(self) -> np.ndarray:
        return np.abs(self.weights)


def _normalize_rows(w: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    flat = w.reshape(w.shape[0], -1)
    if mask is not None:
        flat = np.where(mask.reshape(1, -1), flat, 0.0)
    nrm = np.linalg.norm(flat, axis=1)
    nrm[nrm == 0] = 1.0
    return (flat / nrm[:, None]).reshape(w.shape)


def obc_mode_weights(
    grid: EvolutionGrid, eigensystem: BiorthogonalEigensystem, normalize: bool = True
) -> WeightField:
    """Weights ``D_j(t)`` of the state on the open-chain eigenmodes.

    The right vectors are taken with unit Euclidean norm in the site basis,
    which fixes the otherwise free scale of ``D_j = <L_j|psi(t)>``. The
    projection runs in the eigensystem's gauge. With ``normalize=False``
    rows stored rescaled (see ``EvolutionGrid.log_scale``) keep that
    rescaling, so compare them only after multiplying by ``exp(log_scale)``.
    """
    if eigensystem.size != grid.n_sites:
        raise InvalidArgument(f"eigensystem size {eigensystem.size} does not match grid with {grid.n_sites} sites")
    Rg, Lg, s = eigensystem.gauged()
    col = np.linalg.norm(s[:, None] * Rg, axis=0)
    D = (grid.psi / s[None, :]) @ Lg.T * col[None, :]
    if normalize:
        D = _normalize_rows(D)
    return WeightField(
        axis="obc_mode",
        coordinates=np.arange(eigensystem.size),
        weights=D,
        normalized_per_instant=normalize,
        times=grid.times,
        excluded=np.zeros(eigensystem.size, dtype=bool),
        energies=eigensystem.eigenvalues,
    )


def reconstruct_from_obc_weights(field: WeightField, eigensystem: BiorthogonalEigensystem) -> np.ndarray:
    """``sum_j D_j |R_j>`` per row, with ``|R_j>`` of unit norm (raw weights only)."""
    Rg, _, s = eigensystem.gauged()
    R = s[:, None] * Rg
    R = R / np.linalg.norm(R, axis=0)
    return field.weights @ R.T


def _z_powers(betas: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    betas = np.asarray(betas, dtype=complex)
    if np.any(betas == 0):
        raise InvalidArgument("beta must be nonzero")
    return betas[:, None] ** (-offsets[None, :].astype(float))


def z_transform(state, betas, origin: int | None = None) -> np.ndarray:
    """``Psi(beta) = sum_x psi(x) beta**-(x - origin)`` over site coordinates ``x``.

    ``state`` may be a vector or a ``(n_times, n_sites)`` array. The default
    origin is the middle site ``n_sites // 2``.
    """
    state = np.asarray(state, dtype=complex)
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    n = state.shape[-1]
    origin = n // 2 if origin is None else origin
    P = _z_powers(betas, np.arange(n) - origin)
    return state @ P.T


def cell_z_transform(state, betas, origin_cell: int | None = None) -> np.ndarray:
    """Cell-resolved transform ``Psi_s(beta) = sum_m psi_{m,s} beta**-(m - origin_cell)``.

    Returns shape ``state.shape[:-1] + (len(betas), 4)``. The default origin
    is the cell ``n_cells // 2`` holding the middle site.
    """
    state = np.asarray(state, dtype=complex)
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    n_sites = state.shape[-1]
    if n_sites % 4:
        raise InvalidArgument("state length must be a multiple of 4")
    n_cells = n_sites // 4
    origin_cell = n_cells // 2 if origin_cell is None else origin_cell
    cells = state.reshape(state.shape[:-1] + (n_cells, 4))
    P = _z_powers(betas, np.arange(n_cells) - origin_cell)
    return np.einsum("bm,...ms->...bs", P, cells)


def nonbloch_weights(
    grid: EvolutionGrid,
    curve: GBZCurve,
    origin_cell: int | None = None,
    match_tol: float = NONBLOCH_MATCH_TOL,
    normalize: bool = True,
) -> WeightField:
    """Weights ``G(t, beta)`` of the state on non-Bloch modes along the GBZ.

    At each GBZ point the cell-resolved Z-transform is projected on the left
    eigenvectors of ``H(beta)`` whose eigenvalues lie within
    ``match_tol * rho`` of an open-chain eigenvalue (``rho`` the spectral
    radius). Matched modes are filed under the negative or positive
    ``Re E`` branch. Points without such a mode on either branch are
    excluded from the normalization.
    """
    if curve.params.n_sites != grid.n_sites:
        raise InvalidArgument("GBZ curve and grid belong to different chain lengths")
    betas = curve.beta
    Hb = build_non_bloch(curve.params, betas)
    E, R = np.linalg.eig(Hb)
    L = np.linalg.inv(R)
    obc = curve.obc_energies
    rho = np.abs(obc).max()
    dist = np.abs(E[:, :, None] - obc[None, None, :]).min(axis=2)
    matched = dist < match_tol * rho
    Psi = cell_z_transform(grid.psi, betas, origin_cell)  # (T, B, 4)
    proj = np.einsum("bns,tbs->tbn", L, Psi)  # (T, B, 4)
    out = np.zeros((grid.times.size, betas.size, 2), dtype=complex)
    branch_e = np.full((betas.size, 2), np.nan + 0j)
    for side, pick in enumerate((E.real < 0, E.real >= 0)):
        use = matched & pick
        # keep the closest match per branch when more than one qualifies
        score = np.where(use, dist, np.inf)
        best = np.argmin(score, axis=1)
        ok = np.isfinite(score[np.arange(betas.size), best])
        out[:, ok, side] = proj[:, np.flatnonzero(ok), best[ok]]
        branch_e[ok, side] = E[np.flatnonzero(ok), best[ok]]
    excluded = ~np.any(np.isfinite(branch_e.real), axis=1)
    if normalize:
        out = _normalize_rows(out, np.repeat(~excluded, 2))
    return WeightField(
        axis="gbz_beta",
        coordinates=betas,
        weights=out,
        normalized_per_instant=normalize,
        times=grid.times,
        excluded=excluded,
        energies=branch_e,
    )


def bz_fourier_weights(grid: EvolutionGrid, bands: BandStructure, origin_cell: int | None = None) -> WeightField:
    """Per-instant normalized Bloch weights ``|K|`` over ``(k, band)``.

    The cell-resolved Fourier transform of the state at each ``k`` of the
    band grid is projected on the biorthogonal left Bloch vectors. The
    normalization runs jointly over all ``(k, band)``; when the grid holds
    both ``-pi`` and ``pi`` the duplicate end point is counted once.
    """
    k = bands.k_grid
    betas = np.exp(1j * k)
    Psi = cell_z_transform(grid.psi, betas, origin_cell)  # (T, K, 4)
    K = np.einsum("kns,tks->tkn", bands.left, Psi)
    mask = np.ones(K.shape[1:], dtype=bool)
    if np.isclose(k[0], -np.pi) and np.isclose(k[-1], np.pi):
        mask[-1] = False
    K = np.abs(_normalize_rows(K, mask))
    return WeightField(
        axis="bz_k",
        coordinates=k,
        weights=K,
        normalized_per_instant=True,
        times=grid.times,
        excluded=~mask.any(axis=1),
        energies=bands.energies.T,
    )


def group_velocity(bands: BandStructure) -> np.ndarray:
    """``d Re E / dk`` per band: central differences inside, one-sided at the ends."""
    return np.gradient(bands.energies.real, bands.k_grid, axis=1, edge_order=1)
