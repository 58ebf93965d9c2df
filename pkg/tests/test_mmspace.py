import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.stats import linregress

from fbz.errors import DiagnosticError, FormatError, SizingError
from fbz.mmspace import (FAMILIES, DiscreteSpace, build_fractal, diagnostics, load_space, net,
                         save_space, vertex_count)

KINDS = ["interval", "square", "vicsek", "gasket", "carpet"]


def scan_ball(space, c, r):
    # linear-scan oracle on ambient coordinates
    d = np.linalg.norm(space.coords - space.coords[c], axis=1)
    return np.nonzero(d < r)[0]


def test_interval_level10_counts():
    sp = build_fractal("interval", 10)
    assert sp.n == 1025
    assert sp.total_mass == pytest.approx(1.0, abs=1e-12)


def test_gasket_count_recurrence():
    v = 3
    for n in range(0, 6):
        assert build_fractal("gasket", n).n == v == 3 * (3 ** n + 1) // 2
        v = 3 * v - 3


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_closed_form_vertex_count(kind, level):
    sp = build_fractal(kind, level)
    assert sp.n == vertex_count(kind, level)
    assert math.fsum(sp.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.all(sp.weights > 0)


def test_vicsek_level1():
    sp = build_fractal("vicsek", 1)
    assert sp.cells.shape[0] == 5
    assert sp.diam == pytest.approx(math.sqrt(2.0), abs=1e-15)


def test_sizing_error_names_count():
    with pytest.raises(SizingError, match="1048577"):
        build_fractal("interval", 20, max_points=1000)


def test_net_interval_quarter():
    sp = build_fractal("interval", 10)
    ids = net(sp, 0.25)
    assert sp.coords[ids, 0].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]


def brute_net_ok(space, ids, delta):
    x = space.coords
    d_in = np.linalg.norm(x[ids][:, None] - x[ids][None], axis=-1)
    sep = np.all(d_in[~np.eye(len(ids), dtype=bool)] >= delta - 1e-12)
    d_all = np.linalg.norm(x[:, None] - x[ids][None], axis=-1)
    maximal = np.all(d_all.min(axis=1) < delta)
    return sep and maximal


@given(kind=st.sampled_from(["interval", "square", "gasket", "vicsek"]),
       delta=st.floats(0.01, 1.5))
def test_net_separated_and_maximal(kind, delta):
    sp = build_fractal(kind, 3 if kind != "interval" else 7)
    assert brute_net_ok(sp, net(sp, delta), delta)


def test_net_extremes(interval4):
    assert net(interval4, 10.0).tolist() == [0]
    assert len(net(interval4, 1 / 16)) == interval4.n


def test_ball_interval_example(interval4):
    got = interval4.ball(interval4.nearest([0.5]), 0.13)
    coords = sorted(interval4.coords[got, 0].tolist())
    assert coords == [0.375, 0.4375, 0.5, 0.5625, 0.625]


def test_ball_extremes(interval4):
    assert interval4.ball(3, 5.0).size == interval4.n
    assert interval4.ball(3, 1 / 16).tolist() == [3]


@given(kind=st.sampled_from(KINDS), c=st.integers(0, 10 ** 6), r=st.floats(1e-3, 2.0))
def test_ball_matches_linear_scan(kind, c, r):
    sp = build_fractal(kind, 3)
    c = c % sp.n
    assert np.array_equal(np.sort(sp.ball(c, r)), scan_ball(sp, c, r))


def test_ball_strict_at_lattice_distance(interval4):
    # d = 2/16 exactly is excluded
    got = interval4.ball(8, 2 / 16)
    assert sorted(got.tolist()) == [7, 8, 9]


@given(kind=st.sampled_from(KINDS), seed=st.integers(0, 2 ** 31))
def test_triangle_inequality_sampled(kind, seed):
    sp = build_fractal(kind, 3)
    rng = np.random.default_rng(seed)
    x, y, z = rng.integers(0, sp.n, 3)
    assert sp.dist(x, z) <= sp.dist(x, y) + sp.dist(y, z) + 1e-12 * sp.diam
    assert sp.dist(x, y) == sp.dist(y, x)


@pytest.mark.parametrize("kind", KINDS)
def test_geodesic_metric_dominates_euclidean(kind):
    sp = build_fractal(kind, 2)
    geo = sp.with_metric("geodesic-graph")
    for i in range(0, sp.n, 3):
        assert np.all(geo.dist_from(i) >= sp.dist_from(i) - 1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_levels_nest_and_masses_refine(kind):
    a, b = build_fractal(kind, 2), build_fractal(kind, 3)
    idx = b.tree.query(a.coords)[0]
    assert np.all(idx < 1e-12)
    m = len(FAMILIES[kind].maps)
    assert a.cell_mass == pytest.approx(m * b.cell_mass, rel=1e-15)


def test_square_ahlfors_matches_continuum_oracle():
    sp = build_fractal("square", 8)
    dg = diagnostics(sp, n_samples=256, seed=0)
    # same samples as diagnostics, exact area of disk cap unit square
    rng = np.random.default_rng(0)
    c = rng.integers(0, sp.n, 256)
    r = np.exp(rng.uniform(math.log(2 * sp.spacing), math.log(sp.diam / 2), 256))

    def area(x0, y0, rad):
        def chord(x):
            s = math.sqrt(max(rad * rad - (x - x0) ** 2, 0.0))
            return max(0.0, min(1.0, y0 + s) - max(0.0, y0 - s))
        lo, hi = max(0.0, x0 - rad), min(1.0, x0 + rad)
        # kinks where the chord meets the top or bottom edge
        kinks = [x0 + sgn * math.sqrt(rad * rad - t * t) for t in (y0, 1.0 - y0) if t < rad
                 for sgn in (-1, 1)]
        kinks = sorted(k for k in kinks if lo < k < hi)
        return quad(chord, lo, hi, points=kinks or None, limit=200)[0]

    m = [area(*sp.coords[i], ri) for i, ri in zip(c, r)]
    oracle = linregress(np.log(r), np.log(m)).slope
    assert abs(dg.ahlfors[0] - oracle) < 0.02


def test_vicsek_ahlfors_exponent():
    dg = diagnostics(build_fractal("vicsek", 5))
    assert abs(dg.ahlfors[0] - math.log(5) / math.log(3)) < 0.1


def test_interval_diagnostics():
    dg = diagnostics(build_fractal("interval", 10))
    assert dg.uniform_perfect_sigma >= 0.5
    assert dg.doubling_const >= 1
    assert dg.ahlfors[1] >= 1
    assert 0 < dg.uniform_perfect_sigma < 1


def test_diagnostics_pure(square4):
    assert diagnostics(square4, seed=3) == diagnostics(square4, seed=3)


def test_diagnostics_errors(square4):
    with pytest.raises(DiagnosticError):
        diagnostics(square4, n_samples=8)
    one = DiscreteSpace(np.zeros((1, 1)), np.ones(1))
    with pytest.raises(DiagnosticError):
        diagnostics(one)


@pytest.mark.parametrize("kind", ["gasket", "vicsek"])
def test_space_file_roundtrip(tmp_path, kind):
    sp = build_fractal(kind, 3)
    path = tmp_path / "s.space"
    save_space(sp, path)
    back = load_space(path)
    assert np.array_equal(back.coords, sp.coords)
    assert np.array_equal(back.weights, sp.weights)
    assert back.metric_mode == sp.metric_mode
    with open(path, encoding="utf-8") as fh:
        assert fh.readline().startswith(f"fbz-space v1 N={sp.n} dim=2 metric=euclidean")


def test_space_file_bad_header(tmp_path):
    path = tmp_path / "bad.space"
    path.write_text("hello\n")
    with pytest.raises(FormatError):
        load_space(path)


def test_precomputed_space(two_point):
    assert two_point.dist(0, 1) == 1.0
    assert two_point.ball(0, 1.0).tolist() == [0]
    assert two_point.ball(0, 1.5).tolist() == [0, 1]
