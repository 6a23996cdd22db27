"""Hamiltonians of the glide-time symmetric double SSH chain.

Each unit cell holds four sites in the order ``(a, b, c, d)``. Sites ``a, c``
form one SSH chain and ``b, d`` the other, with intracell hops ``a-c = t2``
and ``b-d = t1`` and intercell hops ``a_{n+1}-c_n = t1`` and
``b_{n+1}-d_n = t2``. The two chains are joined by non-reciprocal rungs:
``b -> a`` and ``c -> d`` carry ``t4`` while ``a -> b`` and ``d -> c``
carry ``t3``.

Momentum convention
-------------------
A generalized momentum ``beta`` labels solutions ``psi_n ~ beta**n`` on cell
``n``. The non-Bloch matrix is ``H(beta) = h_minus / beta + h_0 + h_plus * beta``
with ``h_r`` the block coupling cell ``m`` to cell ``m + r``, and the Bloch
matrix is ``H(k) = H(exp(1j * k))``. Under this choice the glide operator
``exp(ik/2) (cos(k/2) s1 t1 + sin(k/2) s2 t1)`` commutes with ``H(k)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "ModelParams",
    "SymmetryResiduals",
    "build_bloch",
    "build_non_bloch",
    "build_real_space",
    "glide_operator",
    "hopping_blocks",
    "symmetry_residuals",
]

A, B, C, D = 0, 1, 2, 3

_SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
_SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)


@dataclass(frozen=True)
class ModelParams:
    """Couplings and chain length of the four-site model.

    Parameters
    ----------
    t1, t2 : float
        Reciprocal couplings of the two SSH chains.
    t3, t4 : float
        Non-reciprocal interchain couplings.
    n_cells : int
        Number of unit cells (four sites each) for real-space matrices.
    """

    t1: float
    t2: float
    t3: float
    t4: float
    n_cells: int = 40

    def __post_init__(self):
        for name in ("t1", "t2", "t3", "t4"):
            value = getattr(self, name)
            if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise InvalidArgument(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(float(value)):
                raise InvalidArgument(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        n = self.n_cells
        if isinstance(n, (bool, np.bool_)) or not isinstance(n, (int, np.integer)):
            raise InvalidArgument(f"n_cells must be an integer, got {n!r}")
        if n < 2:
            raise InvalidArgument(f"n_cells must be at least 2, got {n}")
        object.__setattr__(self, "n_cells", int(n))

    @property
    def couplings(self) -> tuple[float, float, float, float]:
        return (self.t1, self.t2, self.t3, self.t4)

    @property
    def is_hermitian(self) -> bool:
        """Exact comparison of the inputs ``t3 == t4``."""
        return self.t3 == self.t4

    @property
    def n_sites(self) -> int:
        return 4 * self.n_cells

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def swapped(self) -> "ModelParams":
        """Mirror partner with ``t3`` and ``t4`` exchanged."""
        return dataclasses.replace(self, t3=self.t4, t4=self.t3)


def hopping_blocks(params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(h_minus, h_0, h_plus)``, the blocks ``H[m, m + r]`` for ``r = -1, 0, 1``."""
    t1, t2, t3, t4 = params.couplings
    h0 = np.zeros((4, 4))
    hm = np.zeros((4, 4))
    hp = np.zeros((4, 4))
    h0[A, C] = h0[C, A] = t2
    h0[B, D] = h0[D, B] = t1
    h0[A, B] = t4
    h0[B, A] = t3
    h0[C, D] = t3
    h0[D, C] = t4
    # a_{m+1} <-> c_m and b_{m+1} <-> d_m
    hm[A, C] = t1
    hp[C, A] = t1
    hm[B, D] = t2
    hp[D, B] = t2
    return hm, h0, hp


def build_non_bloch(params: ModelParams, beta) -> np.ndarray:
    """Non-Bloch matrix ``H(beta)``.

    ``beta`` may be a scalar or an array; an array of shape ``s`` gives a
    result of shape ``s + (4, 4)``.
    """
    b = np.asarray(beta, dtype=complex)
    if np.any(b == 0):
        raise InvalidArgument("beta must be nonzero")
    hm, h0, hp = hopping_blocks(params)
    b = b[..., None, None]
    return hm / b + h0 + hp * b


def build_bloch(params: ModelParams, k) -> np.ndarray:
    """Bloch matrix ``H(k) = H(beta = exp(ik))`` for real ``k`` (scalar or array)."""
    k = np.asarray(k, dtype=float)
    return build_non_bloch(params, np.exp(1j * k))


def build_real_space(params: ModelParams, boundary: Literal["open", "periodic"] = "open") -> np.ndarray:
    """Real-space matrix on ``params.n_cells`` cells, cell-major site order."""
    if boundary not in ("open", "periodic"):
        raise InvalidArgument(f"boundary must be 'open' or 'periodic', got {boundary!r}")
    n = params.n_cells
    hm, h0, hp = hopping_blocks(params)
    H = np.kron(np.eye(n), h0)
    H += np.kron(np.eye(n, k=1), hp)
    H += np.kron(np.eye(n, k=-1), hm)
    if boundary == "periodic":
        H[-4:, :4] += hp
        H[:4, -4:] += hm
    return H


def glide_operator(k: float) -> np.ndarray:
    """``G(k) = exp(ik/2) (cos(k/2) s1 t1 + sin(k/2) s2 t1)``.

    ``s`` acts on the chain index (``{a, b}`` versus ``{c, d}``) and ``t`` on
    the position inside each pair, so ``s`` is the outer Kronecker factor.
    """
    return np.exp(0.5j * k) * (
        np.cos(k / 2) * np.kron(_SIGMA1, _SIGMA1) + np.sin(k / 2) * np.kron(_SIGMA2, _SIGMA1)
    )


@dataclass(frozen=True)
class SymmetryResiduals:
    """Max-norm residuals of the glide, time-reversal and ``theta**2`` checks.

    ``theta_sq_factor`` is the mean eigenvalue of ``theta**2`` over the Bloch
    eigenvectors; it equals ``exp(ik)``.
    """

    glide: float
    trs: float
    theta_sq: float
    theta_sq_factor: complex


def symmetry_residuals(params: ModelParams, k: float) -> SymmetryResiduals:
    """Check ``G H(k) G^-1 = H(k)``, ``H(k)* = H(-k)`` and ``theta**2 = exp(ik)``.

    ``theta = G K`` with ``K`` complex conjugation maps a state at ``k`` to a
    state at ``-k``; applying it twice gives ``G(k) G(-k)*``.
    """
    H = build_bloch(params, k)
    G = glide_operator(k)
    glide = np.abs(G @ H @ np.linalg.inv(G) - H).max()
    trs = np.abs(H.conj() - build_bloch(params, -k)).max()
    theta2 = G @ glide_operator(-k).conj()
    _, vecs = np.linalg.eig(H)
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    images = theta2 @ vecs
    factors = np.sum(vecs.conj() * images, axis=0)
    theta_sq = np.abs(images - np.exp(1j * k) * vecs).max()
    return SymmetryResiduals(float(glide), float(trs), float(theta_sq), complex(factors.mean()))
