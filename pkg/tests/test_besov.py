import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from fbz.besov import (SweepReport, bbm_sweep, bbm_values, besov_pp_norm, dyadic_radii,
                       estimate_alpha, extrapolate_linear, kernel_functional, ks_functional,
                       lemma_inequality_checks, smoothed_noise, weak_monotonicity)
from fbz.errors import DomainError
from fbz.mmspace import build_fractal
from fbz.scale_kernel import KernelFamily, ScaleFn

# (1 - theta) * double integral over [0,1]^2 of |x-y|^(2-2 theta) / m(B(y,|x-y|)),
# computed once by nested quadrature with the exact truncated ball length
BBM_ORACLE = {0.8: 0.39741282736102035, 0.9: 0.4411633900333764, 0.95: 0.4681954510482678,
              0.975: 0.4834178362470955, 0.9875: 0.49152675718988725}

PSI2 = ScaleFn.power(2)


def bbm_quadrature(theta):
    a = 2 - 2 * theta

    def inner(y):
        def g(t):
            k = (y + t <= 1) + (y - t >= 0)
            return k * t ** a / (min(y + t, 1) - max(y - t, 0))
        pts = sorted({min(y, 1 - y), max(y, 1 - y)})
        return quad(g, 0, max(y, 1 - y), points=pts, limit=200)[0]

    return (1 - theta) * quad(inner, 0, 1, points=[0.5], limit=200)[0]


def test_oracle_reproduces():
    assert bbm_quadrature(0.8) == pytest.approx(BBM_ORACLE[0.8], rel=1e-9)


def test_bbm_interval_close_to_oracle():
    sp = build_fractal("interval", 10)
    v = bbm_values(sp, sp.coords[:, 0], 2.0, 1.0, [0.8])[0]
    assert v == pytest.approx(BBM_ORACLE[0.8], rel=0.02)


def test_ks_two_point(two_point):
    assert ks_functional(two_point, [0.0, 1.0], 2.0, PSI2, 2.0) == 1 / 8


def test_besov_two_point(two_point):
    assert besov_pp_norm(two_point, [0.0, 1.0], 2.0, 1.0) == 1.0


def test_bbm_two_point(two_point):
    # each ordered pair: (theta_p - theta) m m |du|^2 / (d^(p theta) m(B(y,d))), strict ball is {y}
    brute = sum(0.5 * 0.25 * 1.0 / (1.0 * 0.5) for _ in range(2))
    assert bbm_values(two_point, [0.0, 1.0], 2.0, 1.0, [0.5])[0] == pytest.approx(brute, rel=1e-15)
    with pytest.raises(DomainError):
        bbm_values(two_point, [0.0, 1.0], 2.0, 1.0, [1.0])


def random_u(space, seed):
    return np.random.default_rng(seed).normal(size=space.n)


@given(seed=st.integers(0, 2 ** 31), eps=st.floats(0.05, 0.8))
def test_kernel_ks_matches_ks_functional(seed, eps, gasket3):
    psi = ScaleFn.power(math.log(5) / math.log(2))
    u = random_u(gasket3, seed)
    a = kernel_functional(gasket3, u, 2.0, psi, KernelFamily.ks(psi), eps)
    b = ks_functional(gasket3, u, 2.0, psi, eps, denom="psi_of_r")
    assert a == pytest.approx(b, rel=1e-12)


@given(seed=st.integers(0, 2 ** 31), r=st.floats(0.05, 1.0), p=st.floats(1.2, 4))
def test_psi_of_d_dominates_psi_of_r(seed, r, p, square4):
    u = random_u(square4, seed)
    lo = ks_functional(square4, u, p, PSI2, r, denom="psi_of_r")
    hi = ks_functional(square4, u, p, PSI2, r, denom="psi_of_d")
    assert hi >= lo * (1 - 1e-12)


@given(seed=st.integers(0, 2 ** 31), t=st.floats(-4, 4), c=st.floats(-5, 5))
def test_homogeneity_and_constants(seed, t, c, square4):
    u = random_u(square4, seed)
    fam = KernelFamily.bbm(1.0, 2.0)
    funcs = [lambda v: ks_functional(square4, v, 2.5, PSI2, 0.3),
             lambda v: kernel_functional(square4, v, 2.5, PSI2, fam, 0.3),
             lambda v: besov_pp_norm(square4, v, 2.5, 0.7)]
    for f in funcs:
        assert f(np.full(square4.n, c)) == 0.0
        assert f(t * u) == pytest.approx(abs(t) ** 2.5 * f(u), rel=1e-11, abs=1e-300)


def test_besov_sum_grows_with_theta(interval8):
    # diam <= 1, so d^(-p theta) is non-decreasing in theta
    u = interval8.coords[:, 0] ** 2
    vals = [besov_pp_norm(interval8, u, 2.0, th) for th in (0.3, 0.5, 0.7, 0.9)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_bbm_sweep_report(interval8):
    grid = [0.5, 0.6, 0.7, 0.8, 0.9]
    rep = bbm_sweep(interval8, interval8.coords[:, 0], 2.0, 1.0, grid)
    assert all(v > 0 and math.isfinite(v) for v in rep.values)
    zero = bbm_sweep(interval8, np.ones(interval8.n), 2.0, 1.0, grid)
    assert zero.values == [0.0] * 5
    with pytest.raises(DomainError):
        bbm_sweep(interval8, interval8.coords[:, 0], 2.0, 1.0, grid[::-1])


def test_extrapolate_linear():
    x = [0.4, 0.3, 0.2, 0.1]
    a, res = extrapolate_linear(x, [1 + 2 * t for t in x])
    assert a == pytest.approx(1.0) and res < 1e-12
    a, res = extrapolate_linear(x, [1.0, 0.0, 1.0, 0.0])
    assert a is None and res > 0.1


def test_sweep_report_formats():
    rep = SweepReport.build("eps", [0.5, 0.25, 0.125, 0.0625], [1.0, 3.0, 2.0, 2.5], "kernel-ks")
    assert rep.sup_value == 3.0 and rep.liminf_value == 2.0
    lines = rep.to_csv().splitlines()
    assert lines[0] == "axis,value,functional" and len(lines) == 5
    d = json.loads(rep.to_json())
    assert d["grid"] == rep.grid and "liminf_rule" in d


def test_weak_monotonicity_constant_is_one(interval4):
    rep = weak_monotonicity(interval4, np.zeros(interval4.n), 2.0, PSI2, KernelFamily.ks(PSI2),
                            [0.5, 0.25, 0.125])
    assert rep.ratio == 1.0 and "0/0" in rep.note


def test_weak_monotonicity_linear_interval():
    sp = build_fractal("interval", 12)
    grid = [2.0 ** -k for k in range(3, 10)]
    rep = weak_monotonicity(sp, sp.coords[:, 0], 2.0, PSI2, KernelFamily.ks(PSI2), grid)
    assert rep.ratio <= 1.2


@given(kind=st.sampled_from(["interval", "gasket"]), seed=st.integers(0, 2 ** 31),
       r=st.floats(0.05, 0.7), delta=st.floats(0.03, 0.3), p=st.floats(1.2, 3.5))
def test_lemma_inequalities_hold(kind, seed, r, delta, p):
    sp = build_fractal(kind, 5 if kind == "interval" else 3)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=sp.n)
    rep = lemma_inequality_checks(sp, u, int(rng.integers(sp.n)), r, delta, p=p)
    assert rep["doublevar"]["ok"] and rep["triint"]["ok"]


def test_lemma_constant_and_far_kernel(gasket3):
    rep = lemma_inequality_checks(gasket3, np.ones(gasket3.n), 4, 0.3, 0.1)
    assert rep["doublevar"]["lhs"] == 0.0 and rep["triint"]["lhs"] == 0.0
    # kernel supported on d >= delta is cut to zero
    rep = lemma_inequality_checks(gasket3, random_u(gasket3, 1), 4, 0.3, 0.1,
                                  h=lambda xs, y, d: np.where(d >= 0.1, 1.0, 0.0))
    assert rep["triint"]["lhs"] == 0.0 and math.isfinite(rep["triint"]["rhs"])


def test_dyadic_radii_anchor():
    a, b = build_fractal("interval", 8), build_fractal("interval", 10)
    ra, rb = dyadic_radii(a), dyadic_radii(b)
    # ascending, largest radius diam/4 shared across levels
    assert ra[-1] == 0.25 and np.array_equal(rb[-ra.size:], ra)
    assert rb[0] >= 4 * b.spacing and rb[0] / 2 < 4 * b.spacing


def test_smoothed_noise_similar_across_levels():
    a, b = build_fractal("square", 4), build_fractal("square", 5)
    na, nb = smoothed_noise(a, seed=3), smoothed_noise(b, seed=3)
    assert np.ptp(na) > 0
    idx = b.tree.query(a.coords)[1]
    assert np.corrcoef(nb[idx], na)[0, 1] > 0.95


def test_estimate_alpha_interval_small():
    fam = {L: build_fractal("interval", L) for L in (7, 8, 9)}
    est = estimate_alpha(fam, 2.0, scan_points=17)
    assert est.flags == []
    assert est.bracket[0] <= est.alpha_hat <= est.bracket[1]
    assert 0.9 <= est.alpha_hat <= 1.1
    json.loads(est.to_json())


def test_estimate_alpha_needs_three_levels():
    with pytest.raises(DomainError):
        estimate_alpha({5: build_fractal("interval", 5), 6: build_fractal("interval", 6)}, 2.0)
