import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from conftest import cached_eigensystem, params
from gtsym.dynamics import (
    EvolutionGrid,
    _evolve_stepped,
    amplification_identity_residual,
    amplification_terms,
    beating_amplitude,
    beating_period,
    boundary_weight,
    com_trajectory,
    default_horizon,
    delta_state,
    evolve,
    growth_rate_fit,
    log_norm_trace,
    log_time_grid,
    norm_trace,
    transit_time,
)
from gtsym.errors import InvalidArgument
from gtsym.gbz import lyapunov_zero_drift
from gtsym.spectral import biorthogonal_eigensystem


# ---------------------------------------------------------------------------
# initial state and grids


def test_delta_state_default_middle():
    psi = delta_state(40)
    assert psi.shape == (160,)
    assert np.flatnonzero(psi).tolist() == [80]
    assert psi[80] == 1
    assert np.linalg.norm(psi) == 1.0


def test_delta_state_custom_site_and_range():
    assert np.flatnonzero(delta_state(5, 3)).tolist() == [3]
    for bad in (-1, 20):
        with pytest.raises(InvalidArgument):
            delta_state(5, bad)


def test_delta_state_broadband():
    amplitude = np.abs(np.fft.fft(delta_state(40)))
    assert np.ptp(amplitude) < 1e-14


def test_log_time_grid():
    t = log_time_grid(60.0, 200)
    assert t.size == 200 and t[0] == 0 and t[-1] == pytest.approx(60.0)
    assert (np.diff(t) > 0).all()
    with pytest.raises(InvalidArgument):
        log_time_grid(-1.0, 10)


@pytest.mark.parametrize("times", [[1.0, 2.0], [0.0, 2.0, 1.0], [], [[0.0, 1.0]]])
def test_evolve_rejects_bad_times(times):
    with pytest.raises(InvalidArgument):
        evolve(params(4, 2, n_cells=4), delta_state(4), times)


def test_evolve_rejects_bad_options():
    p = params(4, 2, n_cells=4)
    with pytest.raises(InvalidArgument):
        evolve(p, delta_state(5), [0.0, 1.0])
    with pytest.raises(InvalidArgument):
        evolve(p, delta_state(4), [0.0, 1.0], method="rk4")
    with pytest.raises(InvalidArgument):
        evolve(p, delta_state(4), [0.0, 1.0], normalization="peak")


# ---------------------------------------------------------------------------
# propagation


def test_initial_row_is_initial_state():
    psi0 = delta_state(40)
    for method in ("spectral", "stepped"):
        g = evolve(params(4, 2), psi0, [0.0, 1.0], method=method, eigensystem=cached_eigensystem(4.0, 2.0))
        assert np.array_equal(g.psi[0], psi0)
        assert g.x0 == 80


def test_hermitian_norm_conserved():
    p = params(2.5, 2.5)
    g = evolve(p, delta_state(40), np.linspace(0, 50, 51), eigensystem=cached_eigensystem(2.5, 2.5))
    assert np.abs(np.sqrt(norm_trace(g)) - 1).max() < 1e-8


@pytest.mark.parametrize("point", [(4.0, 2.0), (2.0, 9.0)])
def test_spectral_matches_stepped(point):
    p = params(*point)
    psi0 = delta_state(40)
    a = evolve(p, psi0, [0.0, 10.0], eigensystem=cached_eigensystem(*point)).psi[1]
    b = evolve(p, psi0, [0.0, 10.0], method="stepped").psi[1]
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6


def test_stepped_converged_in_substep():
    p = params(4, 2)
    psi0 = delta_state(40)
    b, _ = _evolve_stepped(p, psi0, np.array([0.0, 10.0]))
    c, _ = _evolve_stepped(p, psi0, np.array([0.0, 10.0]), substep_norm=0.25)
    assert np.linalg.norm(b[1] - c[1]) / np.linalg.norm(c[1]) < 1e-10


def test_fallback_to_stepped_near_exceptional_point():
    p = params(4, 2, n_cells=4)
    es = biorthogonal_eigensystem(np.eye(16))
    defective = type(es)(es.eigenvalues, es.right, es.left, 1e-12, True, es.gauge)
    g = evolve(p, delta_state(4), [0.0, 1.0], eigensystem=defective)
    assert g.metadata["method"] == "stepped"
    assert "fallback" in g.metadata
    ref = evolve(p, delta_state(4), [0.0, 1.0], method="stepped")
    assert np.allclose(g.psi, ref.psi)


def test_per_instant_rows_unit_norm():
    g = evolve(params(2, 9), delta_state(40), np.linspace(0, 80, 41), normalization="per_instant",
               eigensystem=cached_eigensystem(2.0, 9.0))
    assert np.abs(np.linalg.norm(g.psi, axis=1) - 1).max() < 1e-12
    with pytest.raises(InvalidArgument):
        norm_trace(g)


def test_overflow_rescaling_keeps_log_norm():
    p = params(2, 9)
    es = cached_eigensystem(2.0, 9.0)
    times = np.array([0.0, 100.0, 2000.0])
    g = evolve(p, delta_state(40), times, eigensystem=es)
    s = evolve(p, delta_state(40), times, method="stepped")
    assert g.log_scale[-1] > 0 and s.log_scale[-1] > 0
    ln_g, ln_s = log_norm_trace(g), log_norm_trace(s)
    assert np.isfinite(ln_g).all()
    assert abs(ln_g[-1] - ln_s[-1]) / ln_s[-1] < 1e-8
    assert np.isinf(norm_trace(g)[-1])


@settings(max_examples=15)
@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False), st.floats(0.1, 20.0))
def test_linearity(alpha, t):
    p = params(4, 2, n_cells=10)
    psi0 = delta_state(10)
    a = evolve(p, alpha * psi0, [0.0, t]).psi[1]
    b = alpha * evolve(p, psi0, [0.0, t]).psi[1]
    assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)


@settings(max_examples=15)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.integers(0, 39))
def test_composition(t1, dt, site):
    p = params(4, 2, n_cells=10)
    psi0 = delta_state(10, site)
    mid = evolve(p, psi0, [0.0, t1]).psi[1]
    two_step = evolve(p, mid, [0.0, dt]).psi[1]
    direct = evolve(p, psi0, [0.0, t1 + dt]).psi[1]
    assert np.linalg.norm(two_step - direct) <= 1e-8 * np.linalg.norm(direct)


# ---------------------------------------------------------------------------
# amplification identity


@pytest.mark.parametrize("point", [(4.0, 2.0), (2.0, 9.0), (9.0, 6.0), (2.5, 2.5)])
def test_amplification_identity(point):
    p = params(*point)
    es = cached_eigensystem(*point)
    g = evolve(p, delta_state(40), np.linspace(0, 20, 81), eigensystem=es)
    assert amplification_identity_residual(g, es) < 1e-6


def test_amplification_identity_hermitian_sides_equal_one():
    es = cached_eigensystem(2.5, 2.5)
    for t in (0.0, 7.0, 20.0):
        terms = amplification_terms(es, delta_state(40), t)
        assert terms["g"] == pytest.approx(0.0, abs=1e-12)
        assert terms["total"] == pytest.approx(1.0, abs=1e-8)
        assert terms["diagonal"] == pytest.approx(1.0, abs=1e-8)


def test_amplification_identity_random_matrix():
    from scipy.linalg import expm

    rng = np.random.default_rng(11)
    M = rng.standard_normal((8, 8))
    es = biorthogonal_eigensystem(M)
    psi0 = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    times = np.linspace(0, 3, 7)
    psi = np.array([expm(-1j * M * t) @ psi0 for t in times])
    grid = EvolutionGrid(times, psi, "raw", None, np.zeros(times.size))
    assert amplification_identity_residual(grid, es) < 1e-8


def test_amplification_identity_rejects_mismatch():
    es = cached_eigensystem(4.0, 2.0)
    g = evolve(params(4, 2, n_cells=10), delta_state(10), [0.0, 1.0])
    with pytest.raises(InvalidArgument):
        amplification_identity_residual(g, es)
    g = evolve(params(4, 2), delta_state(40), [0.0, 1.0], normalization="per_instant", eigensystem=es)
    with pytest.raises(InvalidArgument):
        amplification_identity_residual(g, es)


# ---------------------------------------------------------------------------
# trajectories, growth and beating


def test_growth_rate_matches_lyapunov():
    p = params(4, 2)
    g = evolve(p, delta_state(40), np.linspace(0, 4000, 201), eigensystem=cached_eigensystem(4.0, 2.0))
    ln = log_norm_trace(g)
    late = g.times >= 2000
    rate = np.polyfit(g.times[late], ln[late], 1)[0]
    assert abs(rate - 2 * lyapunov_zero_drift(p)) / (2 * lyapunov_zero_drift(p)) < 0.05
    assert (np.diff(ln[late]) > 0).all()


def test_transit_and_horizon():
    p = params(4, 2)
    assert default_horizon(p) == pytest.approx(3 * transit_time(p))
    assert transit_time(p.replace(n_cells=80)) == pytest.approx(2 * transit_time(p))


@pytest.mark.parametrize("point,side", [((4.0, 2.0), "left"), ((2.0, 9.0), "right")])
def test_boundary_accumulation(point, side):
    p = params(*point)
    T = default_horizon(p)
    g = evolve(p, delta_state(40), np.linspace(0, T, 100), normalization="per_instant", eigensystem=cached_eigensystem(*point))
    assert boundary_weight(g)[side][-1] > 0.9


def test_boundary_weight_rejects_fraction():
    g = evolve(params(4, 2, n_cells=4), delta_state(4), [0.0])
    with pytest.raises(InvalidArgument):
        boundary_weight(g, 0.5)


def test_hermitian_mirror_partner_evolutions():
    # the chain reflection maps the middle site 80 (cell 20, a) to site 78
    # (cell 19, c); evolutions from the two sites are mirror images
    p = params(2.5, 2.5)
    es = cached_eigensystem(2.5, 2.5)
    T = np.linspace(0, default_horizon(p), 60)
    a = evolve(p, delta_state(40, 80), T, normalization="per_instant", eigensystem=es).probabilities()
    b = evolve(p, delta_state(40, 78), T, normalization="per_instant", eigensystem=es).probabilities()
    sigma = np.array([2, 3, 0, 1])
    perm = 4 * (39 - np.repeat(np.arange(40), 4)) + sigma[np.tile(np.arange(4), 40)]
    assert np.abs(a[:, perm] - b).max() < 1e-10
    com = com_trajectory(EvolutionGrid(T, np.sqrt(a), "per_instant", 80, np.zeros(T.size)))
    assert np.abs(com - 80).max() < 4.0


@settings(max_examples=20, suppress_health_check=[HealthCheck.filter_too_much])
@given(st.floats(0.2, 10.0), st.floats(0.2, 10.0))
def test_direction_law(t3, t4):
    assume(abs(t3 - t4) > 0.5)
    p = params(t3, t4, n_cells=20)
    T = np.linspace(0, default_horizon(p), 40)
    bw = boundary_weight(evolve(p, delta_state(20), T, normalization="per_instant"))
    assert (bw["left"][-1] > bw["right"][-1]) == (t3 > t4)


@pytest.fixture(scope="module")
def beating_runs():
    out = {}
    for point in [(4.0, 2.0), (2.0, 9.0)]:
        p = params(*point)
        T = default_horizon(p)
        g = evolve(p, delta_state(40), np.linspace(0, 2 * T, 3000), normalization="per_instant",
                   eigensystem=cached_eigensystem(*point))
        out[point] = (g, T)
    return out


def test_beating_present_only_in_phase_a(beating_runs):
    amp_a = beating_amplitude(*beating_runs[(4.0, 2.0)])
    amp_b = beating_amplitude(*beating_runs[(2.0, 9.0)])
    assert amp_a >= 5 * amp_b
    assert amp_a > 1e-3


def test_beating_period_from_dominant_pair(beating_runs):
    g, T = beating_runs[(4.0, 2.0)]
    E = cached_eigensystem(4.0, 2.0).eigenvalues
    top = E[E.imag > E.imag.max() - 1e-3 * E.imag.max()]
    expected = 2 * np.pi / np.ptp(top.real)
    resolution = expected**2 / (g.times[-1] - T)
    assert abs(beating_period(g, T) - expected) < 2 * resolution


def test_beating_period_requires_uniform_grid():
    p = params(4, 2, n_cells=10)
    g = evolve(p, delta_state(10), log_time_grid(50, 40))
    with pytest.raises(InvalidArgument):
        beating_period(g, 1.0)


def test_growth_rate_fit_window():
    p = params(2, 9)
    assert growth_rate_fit(p, eigensystem=cached_eigensystem(2.0, 9.0)) == pytest.approx(lyapunov_zero_drift(p), rel=0.05)
