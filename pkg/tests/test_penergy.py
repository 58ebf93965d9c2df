import math

import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from fbz.errors import DomainError, FormatError
from fbz.mmspace import build_fractal
from fbz.penergy import (EnergyForm, boundary_sets, contraction_check, energy, energy_measure,
                         fractal_form, lattice_ops_check, load_form, measure_PI, save_form,
                         solve_capacity, walk_dimension)
from fbz.scale_kernel import ScaleFn


def path_form(n, p=2.0):
    return EnergyForm.from_edges(p, [(k, k + 1) for k in range(n)], 1.0, n + 1)


def brute_energy(form, u):
    return sum(w * abs(u[a] - u[b]) ** form.p for a, b, w in zip(form.i, form.j, form.w))


def test_single_edge_energy():
    f = path_form(1)
    assert energy(f, [0.0, 1.0]) == 1.0
    assert energy(f, [0.3, 0.3]) == 0.0


def test_path_energy_p3():
    f = path_form(3, p=3.0)
    u = np.linspace(0, 1, 4)
    assert energy(f, u) == pytest.approx(1 / 9, rel=1e-14)
    assert energy(f, u) == pytest.approx(brute_energy(f, u), rel=1e-14)


def test_length_mismatch():
    with pytest.raises(DomainError):
        energy(path_form(2), [0.0, 1.0])


def test_form_invariants():
    with pytest.raises(DomainError):
        EnergyForm.from_edges(2.0, [(0, 1), (1, 0)], 1.0, 2)
    with pytest.raises(DomainError):
        EnergyForm.from_edges(2.0, [(0, 1)], 0.0, 2)
    with pytest.raises(DomainError):
        EnergyForm.from_edges(1.0, [(0, 1)], 1.0, 2)


def test_energy_measure_examples():
    assert energy_measure(path_form(1), [0.0, 1.0]).per_vertex.tolist() == [0.5, 0.5]
    assert energy_measure(path_form(2), [0.0, 1.0, 1.0]).per_vertex.tolist() == [0.5, 0.5, 0.0]


def test_energy_measure_strong_locality():
    f = path_form(8)
    u = np.array([0, 1, 2, 2, 2, 2, 5, 3, 1.0])
    v = u.copy()
    v[[0, 8]] = [9.0, -4.0]
    # vertex 4 with neighborhood {3,4,5}; changes only outside it and its boundary {2,6}
    assert energy_measure(f, u).per_vertex[4] == energy_measure(f, v).per_vertex[4]


vectors = st.lists(st.floats(-10, 10), min_size=6, max_size=6).map(np.array)


@given(u=vectors, t=st.floats(-5, 5), p=st.floats(1.1, 4))
def test_homogeneity(u, t, p):
    f = EnergyForm.from_edges(p, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)],
                              [1.0, 2.0, 0.5, 1.0, 3.0, 1.0, 0.25], 6)
    assert energy(f, t * u) == pytest.approx(abs(t) ** p * energy(f, u), rel=1e-12, abs=1e-300)


@given(u=vectors, v=vectors, p=st.floats(1.1, 4))
def test_triangle_inequality(u, v, p):
    f = EnergyForm.from_edges(p, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)], 1.0, 6)
    lhs = energy(f, u + v) ** (1 / p)
    assert lhs <= energy(f, u) ** (1 / p) + energy(f, v) ** (1 / p) + 1e-9


@given(u=vectors, p=st.floats(1.1, 4))
def test_measure_totals_energy(u, p):
    f = EnergyForm.from_edges(p, [(0, 1), (1, 2), (2, 5), (3, 4), (0, 4)], [1.0, 0.5, 2.0, 1.0, 1.0], 6)
    assert energy_measure(f, u).total == pytest.approx(energy(f, u), rel=1e-10, abs=1e-300)


def test_contraction_examples():
    f = path_form(1)
    ok, slack = contraction_check(f, [0.0, 1.0], [0.0, 1.0], [0.0, 1.0])
    assert ok and slack == 0.0
    ok, slack = contraction_check(f, [0.0, 1.0], [0.0, 0.5], [0.0, 0.5])
    assert ok and slack == pytest.approx(0.75)
    with pytest.raises(DomainError):
        contraction_check(f, [0.0, 1.0], [0.0, 1.0], [0.0, 2.0])


@given(u=vectors, p=st.floats(1.1, 4))
def test_contraction_abs(u, p):
    f = EnergyForm.from_edges(p, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (2, 5)], 1.0, 6)
    assert contraction_check(f, u, [-1.0, 0.0, 1.0], [1.0, 0.0, 1.0])[0]


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("n", [1, 4, 10])
def test_path_capacity(n, p):
    sol = solve_capacity(path_form(n, p), [0], [n])
    assert sol.value == pytest.approx(n ** (1 - p), rel=1e-7)
    assert sol.potential[0] == 1.0 and sol.potential[n] == 0.0


def test_disconnected_capacity_zero():
    f = EnergyForm.from_edges(2.0, [(0, 1), (2, 3)], 1.0, 4)
    sol = solve_capacity(f, [0, 1], [2, 3])
    assert sol.value == 0.0


def test_capacity_argument_errors():
    with pytest.raises(DomainError):
        solve_capacity(path_form(2), [0], [0, 2])
    with pytest.raises(DomainError):
        solve_capacity(path_form(2), [], [2])


def test_vicsek_capacity_ratio():
    vals = []
    for k in (1, 2, 3):
        sp = build_fractal("vicsek", k)
        a, b = boundary_sets(sp)
        vals.append(solve_capacity(fractal_form(sp, 2.0, "unit"), a, b).value)
    assert vals[1] / vals[0] == pytest.approx(1 / 3, rel=1e-9)
    assert vals[2] / vals[1] == pytest.approx(1 / 3, rel=1e-9)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_capacity_markov_and_kkt(p, gasket3):
    f = fractal_form(gasket3, p, "unit")
    a, b = boundary_sets(gasket3)
    sol = solve_capacity(f, a, b)
    assert sol.potential.min() >= 0.0 and sol.potential.max() <= 1.0
    assert sol.kkt_residual <= 1e-9
    assert sol.value == energy(f, sol.potential)


@given(seed=st.integers(0, 2 ** 31), p=st.sampled_from([1.5, 2.0, 3.0]))
@example(seed=9336, p=1.5)
def test_capacity_monotone_in_sets(seed, p, square4):
    f = fractal_form(square4, p, "unit")
    rng = np.random.default_rng(seed)
    ids = rng.permutation(square4.n)
    e1, e0, extra = ids[:2], ids[2:4], ids[4:7]
    base = solve_capacity(f, e1, e0, tol=1e-8).value
    assert solve_capacity(f, np.r_[e1, extra], e0, tol=1e-8).value >= base * (1 - 1e-6)
    assert solve_capacity(f, e1, np.r_[e0, extra], tol=1e-8).value >= base * (1 - 1e-6)


def test_walk_dimension_closed_forms():
    assert walk_dimension("interval", 2.0) == pytest.approx(2.0)
    assert walk_dimension("gasket", 2.0) == pytest.approx(math.log(5) / math.log(2))
    assert walk_dimension("vicsek", 2.0) == pytest.approx(math.log(15) / math.log(3))


def test_measure_pi_interval_linear():
    sp = build_fractal("interval", 8)
    f = fractal_form(sp, 2.0)
    rng = np.random.default_rng(1)
    samples = [(int(rng.integers(sp.n)), float(r)) for r in np.exp(rng.uniform(-5, -1, 40))]
    x = sp.coords[:, 0]
    out = measure_PI(f, sp, ScaleFn.power(2), samples, [x, np.ones(sp.n)])
    assert 0 < out["C_P_hat"] <= 1
    assert out["violations"] == []


def test_measure_pi_disconnected_reports_violation(interval4):
    edges = [(k, k + 1) for k in range(16) if k != 8]
    f = EnergyForm.from_edges(2.0, edges, 1.0, 17)
    u = (interval4.coords[:, 0] > 0.5).astype(float)
    out = measure_PI(f, interval4, ScaleFn.power(2), [(8, 0.2)], [u])
    assert len(out["violations"]) == 1


def test_lattice_ops_examples():
    f = path_form(1)
    rep = lattice_ops_check(f, [0.0, 1.0], [1.0, 0.0])
    assert rep["lhs"] == 0.0 and rep["rhs"] == 2.0
    rep = lattice_ops_check(f, [0.0, 1.0], [0.0, 1.0])
    assert rep["C_lattice"] == 1.0


@given(u=vectors, v=vectors, p=st.floats(1.1, 4))
def test_lattice_constant_bound(u, v, p):
    f = EnergyForm.from_edges(p, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5)], 1.0, 6)
    rep = lattice_ops_check(f, u, v)
    assert rep["lhs"] <= 2 ** (p - 1) * rep["rhs"] * (1 + 1e-12) + 1e-300


def test_form_roundtrip(tmp_path, gasket3):
    f = fractal_form(gasket3, 2.5)
    path = tmp_path / "g.form"
    save_form(f, path)
    back = load_form(path)
    assert back.p == f.p and back.vertex_count == f.vertex_count
    assert np.array_equal(back.i, f.i) and np.array_equal(back.w, f.w)
    path.write_text("fbz-form v1 p=2 E=3\n0 1 1\n")
    with pytest.raises(FormatError):
        load_form(path)
