import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import params
from gtsym.model import ModelParams, build_non_bloch
from gtsym.polynomial import (
    CLEARING_POWER,
    DEGREE,
    bivariate_coefficients,
    characteristic_beta_roots,
    characteristic_coefficients,
    evaluate_bivariate,
)

coupling = st.floats(0.2, 10.0, allow_nan=False)


def test_degree_from_hopping_range():
    assert DEGREE == 4
    assert CLEARING_POWER == 2


@given(coupling, coupling, coupling, coupling, st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_coefficients_reproduce_determinant(t1, t2, t3, t4, E):
    p = ModelParams(t1, t2, t3, t4)
    c = characteristic_coefficients(p, E)
    for beta in (0.7 + 0.2j, -1.3j, 2.1):
        direct = beta**CLEARING_POWER * np.linalg.det(build_non_bloch(p, beta) - E * np.eye(4))
        poly = np.polynomial.polynomial.polyval(beta, c)
        assert abs(poly - direct) <= 1e-9 * max(1.0, abs(direct), np.abs(c).max())


@given(coupling, coupling, coupling, coupling, st.floats(0.3, 3.0), st.floats(-np.pi, np.pi))
def test_roots_contain_generating_beta(t1, t2, t3, t4, r, phi):
    p = ModelParams(t1, t2, t3, t4)
    beta0 = r * np.exp(1j * phi)
    for E in np.linalg.eigvals(build_non_bloch(p, beta0)):
        roots = characteristic_beta_roots(p, E)
        assert np.abs(roots - beta0).min() < 1e-8 * max(1.0, r)


def test_roots_sorted_by_modulus():
    roots = characteristic_beta_roots(params(2, 0.5), np.array([0.3 + 0.1j, 1.5, -2.0j]))
    assert roots.shape == (3, DEGREE)
    assert (np.diff(np.abs(roots), axis=1) >= 0).all()


def test_hermitian_band_energy_has_unit_circle_pair():
    p = params(2.5, 2.5)
    E = np.linalg.eigvalsh(build_non_bloch(p, np.exp(0.8j)))[2]
    r = np.abs(characteristic_beta_roots(p, E))
    assert np.sum(np.abs(r - 1) < 1e-8) >= 2


def test_leading_coefficient_is_energy_independent():
    p = params(2, 0.5)
    lead = characteristic_coefficients(p, np.array([0.3, 2.3 - 1j, -4.0]))[:, -1]
    assert np.allclose(lead, (p.t1 * p.t2) ** 2, atol=1e-12)


def test_degree_collapse_flag():
    roots, collapse = characteristic_beta_roots(params(2, 0.5), np.array([0.5, 1.0]), return_collapse=True)
    assert not collapse.any()
    assert np.isfinite(roots).all()
    # t1 = 0 cuts the intercell bonds of one chain and the beta**4 term vanishes
    roots, collapse = characteristic_beta_roots(params(2, 0.5, t1=0.0), np.array([0.5, 1.0]), return_collapse=True)
    assert collapse.all()
    assert (np.abs(roots[:, -1]) > 1e10).all()


def test_bivariate_matches_univariate():
    p = params(4, 2)
    C = bivariate_coefficients(p)
    E = 0.4 - 0.3j
    c = characteristic_coefficients(p, E)
    for beta in (0.5, 1.2j, -0.8 + 0.1j):
        assert evaluate_bivariate(C, beta, E) == pytest.approx(np.polynomial.polynomial.polyval(beta, c), abs=1e-10)


def test_bivariate_derivatives_by_finite_difference():
    p = params(4, 2)
    C = bivariate_coefficients(p)
    b, E, h = 0.6 + 0.2j, 0.3 + 0.1j, 1e-6
    db = (evaluate_bivariate(C, b + h, E) - evaluate_bivariate(C, b - h, E)) / (2 * h)
    dE = (evaluate_bivariate(C, b, E + h) - evaluate_bivariate(C, b, E - h)) / (2 * h)
    assert evaluate_bivariate(C, b, E, d_beta=1) == pytest.approx(db, rel=1e-6)
    assert evaluate_bivariate(C, b, E, d_energy=1) == pytest.approx(dE, rel=1e-6)
