import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bisect_gap_closing, cached_path_scan, cached_phase_diagram, params
from gtsym.dynamics import beating_amplitude, default_horizon, delta_state, evolve
from gtsym.errors import ClassificationAmbiguous, InvalidArgument
from gtsym.phases import (
    DynamicPhaseClassifier,
    EigenmodePhaseClassifier,
    dynamic_phase,
    eigenmode_phase,
    lyapunov_path_scan,
    path_params,
    phase_diagram,
    second_difference_spike,
    worker_count,
)
from gtsym.spectral import complex_zak_phase, energy_winding, pbc_bands, spectrum_distance

EIGENMODE_POINTS = {
    (2.0, 0.5): ("nontrivial", "left", -1, "I"),
    (2.0, 4.0): ("gapless", "right", 1, "II'"),
    (5.0, 4.0): ("trivial", "left", -1, "III"),
    (2.0, 2.0): ("nontrivial", "none", 0, "Hermitian"),
}
DYNAMIC_POINTS = {(4.0, 2.0): "A", (2.0, 9.0): "B'", (9.0, 6.0): "C", (2.5, 2.5): "Hermitian"}
ALL_POINTS = list(EIGENMODE_POINTS) + list(DYNAMIC_POINTS)


def prime_swap(label: str) -> str:
    if label in ("Hermitian", "error"):
        return label
    return label[:-1] if label.endswith("'") else label + "'"


def circ_dist(a, b):
    return abs((a - b + np.pi) % (2 * np.pi) - np.pi)


# ---------------------------------------------------------------------------
# single points


@pytest.mark.parametrize("point,expected", EIGENMODE_POINTS.items())
def test_eigenmode_labeled_points(point, expected):
    lab = eigenmode_phase(params(*point))
    assert (lab.topology, lab.nhse, lab.winding, lab.region) == expected
    if lab.topology != "gapless":
        target = np.pi if lab.topology == "nontrivial" else 0.0
        assert circ_dist(lab.zak_total, target) < 1e-3


@pytest.mark.parametrize("point,expected", DYNAMIC_POINTS.items())
def test_dynamic_labeled_points(point, expected):
    assert dynamic_phase(params(*point)).phase_class == expected


def test_dynamic_frequency_and_direction():
    a, b, c = (dynamic_phase(params(*pt)) for pt in [(4, 2), (2, 9), (9, 6)])
    assert (a.frequency, a.direction) == ("dual", "left")
    assert (b.frequency, b.direction) == ("single", "right")
    assert (c.frequency, c.direction) == ("all_real", "left")
    assert len(a.dominant_energies) >= 2
    assert np.allclose(sorted(e.real for e in a.dominant_energies)[0], -max(e.real for e in a.dominant_energies), atol=1e-6)


@pytest.mark.parametrize("point", ALL_POINTS)
def test_dynamic_labels_stable_in_size(point):
    assert dynamic_phase(params(*point)).phase_class == dynamic_phase(params(*point), n_cells=80).phase_class


def test_dynamic_phase_requires_forty_cells():
    with pytest.raises(InvalidArgument):
        dynamic_phase(params(4, 2, n_cells=20))


def test_ambiguous_frequency_clusters_reported():
    E = np.array([-2 + 1j, -1 + 1j, 1j, 1 + 1j, 2 + 1j, 0.5 - 1j])
    with pytest.raises(ClassificationAmbiguous):
        dynamic_phase(params(4, 2), energies=E)


def test_dynamic_phase_from_supplied_energies():
    assert dynamic_phase(params(4, 2), energies=np.array([-1.0, 0.5, 2.0])).phase_class == "C"
    assert dynamic_phase(params(4, 2), energies=np.array([1j, -1j, 3.0])).phase_class == "B"
    assert dynamic_phase(params(2, 4), energies=np.array([1 + 1j, -1 + 1j, 3.0])).phase_class == "A'"


def test_label_records_serialize():
    d = dynamic_phase(params(4, 2)).as_dict()
    assert set(d) >= {"phase_class", "frequency", "direction", "dominant_energies"}
    assert all(isinstance(e, complex) for e in d["dominant_energies"])
    assert set(eigenmode_phase(params(2, 0.5)).as_dict()) == {"topology", "nhse", "region", "zak_total", "winding"}


@settings(max_examples=10)
@given(st.floats(0.3, 8.0), st.floats(0.3, 8.0))
def test_eigenmode_invariants(t3, t4):
    p = params(t3, t4)
    lab = eigenmode_phase(p)
    zak = complex_zak_phase(p)
    assert (lab.topology == "gapless") == zak.gapless
    if not zak.gapless:
        assert (lab.topology == "nontrivial") == (circ_dist(zak.total_occupied, np.pi) < 1e-3)
    assert lab.nhse == {-1: "left", 1: "right", 0: "none"}[lab.winding]
    ref = pbc_bands(p, 256).energies[0].mean()
    if not p.is_hermitian and spectrum_distance(p, ref) > 0.05:
        assert energy_winding(p, ref) in (lab.winding, 0)


@settings(max_examples=10)
@given(st.floats(0.3, 10.0), st.floats(0.3, 10.0))
def test_dynamic_invariants(t3, t4):
    p = params(t3, t4)
    lab = dynamic_phase(p)
    assert (lab.phase_class == "Hermitian") == (t3 == t4)
    if lab.phase_class.startswith("C"):
        assert lab.frequency == "all_real"
    if t3 != t4:
        assert lab.phase_class.endswith("'") == (t3 < t4)


def test_beating_agrees_with_frequency_count_across_boundary():
    # neighbouring points on either side of the A/B boundary along t4 = 2;
    # the window spans several of the long beat periods near the boundary
    amps = {}
    for t3 in (7.0, 7.25):
        p = params(t3, 2.0)
        T = default_horizon(p)
        g = evolve(p, delta_state(40), np.linspace(0, 5 * T, 4000), normalization="per_instant")
        amps[dynamic_phase(p).phase_class] = beating_amplitude(g, T)
    assert set(amps) == {"A", "B"}
    assert amps["A"] > 10 * amps["B"]


# ---------------------------------------------------------------------------
# grids


@pytest.fixture(scope="module")
def eigen_grid():
    return cached_phase_diagram("eigenmode", 0.2, 8.0)


def test_grid_rejects_low_resolution():
    with pytest.raises(InvalidArgument):
        phase_diagram("eigenmode", (1, 2), (1, 2), 8)
    with pytest.raises(InvalidArgument):
        phase_diagram("bogus", (1, 2), (1, 2), 16)


def test_grid_shape_and_records(eigen_grid):
    assert eigen_grid.labels.shape == (16, 16)
    assert len(eigen_grid.records) == 256
    assert "error" not in set(eigen_grid.labels.ravel())


@pytest.mark.parametrize("kind", ["eigenmode", "dynamic"])
def test_grid_mirror_symmetry(kind):
    g = cached_phase_diagram(kind, 0.2, 8.0) if kind == "eigenmode" else cached_phase_diagram(kind, 0.2, 10.0)
    swapped = np.vectorize(prime_swap, otypes=[object])(g.labels.T)
    assert (swapped == g.labels).all()


def test_swapping_intra_cell_couplings_reverses_nhse(eigen_grid):
    other = cached_phase_diagram("eigenmode", 0.2, 8.0, t1=2.0, t2=1.0)
    reversed_ = other.labels != eigen_grid.labels
    assert reversed_.any()
    for i, j in zip(*np.nonzero(reversed_)):
        assert other.labels[i, j] == prime_swap(eigen_grid.labels[i, j])


def test_topology_boundaries_on_straight_lines(eigen_grid):
    cell = eigen_grid.t3[1] - eigen_grid.t3[0]
    topo = np.array([r["topology"] for r in eigen_grid.records]).reshape(eigen_grid.labels.shape)
    for i0, j0, i1, j1 in eigen_grid.boundaries:
        if topo[i0, j0] == topo[i1, j1]:
            continue  # direction change across the Hermitian line
        if i0 != i1:
            assert abs(0.5 * (eigen_grid.t3[i0] + eigen_grid.t3[i1]) - 3.0) <= cell
        else:
            assert abs(0.5 * (eigen_grid.t4[j0] + eigen_grid.t4[j1]) - 3.0) <= cell


@pytest.mark.parametrize("c", [1.0, 5.0])
def test_gap_closing_bisection_oracle(c):
    assert bisect_gap_closing(lambda x: (x, c), 0.2, 8.0) == pytest.approx(3.0, abs=1e-6)
    assert bisect_gap_closing(lambda x: (c, x), 0.2, 8.0) == pytest.approx(3.0, abs=1e-6)


def test_grid_independent_of_workers(eigen_grid):
    par = phase_diagram("eigenmode", (0.2, 8.0), (0.2, 8.0), 16, workers=2)
    assert (par.labels == eigen_grid.labels).all()
    assert json.dumps(par.records) == json.dumps(eigen_grid.records)


def test_grid_records_errors_and_continues(monkeypatch):
    import gtsym.phases as ph

    def flaky(p):
        if p.t3 > 5 and p.t4 < 2:
            raise ClassificationAmbiguous("forced")
        return ph.DynamicPhaseLabel("A", "dual", "left", 1.0)

    monkeypatch.setattr(ph, "dynamic_phase", flaky)
    g = phase_diagram("dynamic", (4.0, 6.0), (1.0, 3.0), 16)
    errors = g.labels == "error"
    assert errors.any() and not errors.all()
    assert all("ClassificationAmbiguous" in r["error"] for r, e in zip(g.records, errors.ravel()) if e)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("GTSYM_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.delenv("GTSYM_WORKERS")
    assert worker_count() == 1
    with pytest.raises(InvalidArgument):
        worker_count(0)


# ---------------------------------------------------------------------------
# Lyapunov paths


def test_path_params():
    assert path_params("path1", 1.5).couplings == (1.0, 2.0, 3.5, 2.0)
    assert path_params("path2", 1.5).couplings == (1.0, 2.0, 10.0, 3.5)
    with pytest.raises(InvalidArgument):
        path_params("path3", 0.0)


def test_path_scan_validation():
    with pytest.raises(InvalidArgument):
        lyapunov_path_scan("path1", 8)
    with pytest.raises(InvalidArgument):
        lyapunov_path_scan("path9", 16)


def test_second_difference_spike():
    v = np.r_[np.linspace(0, 1, 10), np.ones(10)]
    i, size = second_difference_spike(v)
    assert i == 9 and size == pytest.approx(1 / 9)


@pytest.mark.parametrize("path", ["path1", "path2"])
def test_lyapunov_matches_growth_fit_along_path(path):
    for s in cached_path_scan(path):
        assert s.error is None
        assert abs(s.lam - s.growth_fit) / max(abs(s.lam), 1e-3) < 0.1


def test_path_two_kink_at_dynamic_boundary():
    scan = cached_path_scan("path2")
    spike, size = second_difference_spike([s.lam for s in scan])
    classes = [s.phase_class for s in scan]
    change = next(i for i in range(1, len(classes)) if classes[i] != classes[i - 1])
    assert classes[change - 1] == "B" and classes[change] == "C"
    assert abs(spike - change) <= 1
    _, smooth = second_difference_spike([s.lam for s in cached_path_scan("path1")])
    assert smooth < size / 10


# ---------------------------------------------------------------------------
# estimator wrappers


def test_classifier_wrappers():
    X = np.array([[2.0, 0.5], [5.0, 4.0]])
    eig = EigenmodePhaseClassifier().fit(X)
    assert list(eig.predict(X)) == ["I", "III"]
    dyn = DynamicPhaseClassifier()
    assert list(dyn.predict([[1.0, 2.0, 4.0, 2.0]])) == ["A"]
    assert dyn.get_params() == {"t1": 1.0, "t2": 2.0, "n_cells": 40}
    dyn.set_params(n_cells=80)
    assert dyn.n_cells == 80
    with pytest.raises(InvalidArgument):
        dyn.set_params(t9=1)
    with pytest.raises(InvalidArgument):
        dyn.predict([[1.0, 2.0, 3.0]])
