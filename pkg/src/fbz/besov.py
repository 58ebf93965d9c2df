"""Besov-type functionals, BBM and KS sweeps, and critical-exponent estimation.

All double sums skip the diagonal and use fixed-chunk compensated reductions,
so results do not depend on the thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from . import _reduce
from .errors import DomainError
from .mmspace import DiscreteSpace
from .scale_kernel import KernelFamily, ScaleFn, eval_scale, kernel_row

ROW_CHUNK = 64


def _omega(space: DiscreteSpace, omega) -> np.ndarray:
    if omega is None:
        return np.ones(space.n, dtype=bool)
    arr = np.asarray(omega)
    if arr.dtype == bool:
        return arr
    mask = np.zeros(space.n, dtype=bool)
    mask[arr.astype(np.int64)] = True
    return mask


def _as_matrix(space: DiscreteSpace, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[0] != space.n:
        raise DomainError(f"function has {u.shape[0]} values for {space.n} points")
    return u[:, None] if u.ndim == 1 else u


# ------------------------------------------------------- ball-restricted sums
def ball_sums(space: DiscreteSpace, u, p: float, radii: Sequence[float], omega=None,
              psi: Optional[ScaleFn] = None, threads: int = 1) -> np.ndarray:
    """sum_{y in Omega} m(y)/m(B(y,r)) sum_{x in B(y,r) cap Omega} m(x)|u(x)-u(y)|^p [/Psi(d)]
    for every radius (rows) and every column of ``u`` (columns).

    Without ``psi`` no distance weighting is applied; with ``psi`` each term is
    divided by Psi(d(x, y)). One ball query at the largest radius serves all
    radii.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise DomainError("radii must be positive")
    U = _as_matrix(space, u)
    om = _omega(space, omega)
    ys = np.nonzero(om)[0]
    rmax = float(radii.max())
    w = space.weights

    def part(a, b):
        acc = np.zeros((b - a, radii.size, U.shape[1]))
        for k, (ids, d) in enumerate(space.balls(ys[a:b], rmax)):
            y = ys[a + k]
            order = np.argsort(d, kind="stable")
            ids, d = ids[order], d[order]
            cm = np.cumsum(w[ids])
            cut = np.searchsorted(d, radii, side="left")
            mass = cm[cut - 1]
            sel = om[ids] & (d > 0)
            terms = np.abs(U[ids] - U[y]) ** p * w[ids][:, None]
            if psi is not None:
                terms[sel] /= eval_scale(psi, d[sel])[:, None]
            terms[~sel] = 0.0
            ct = np.vstack([np.zeros((1, U.shape[1])), np.cumsum(terms, axis=0)])
            acc[k] = w[y] * ct[cut] / mass[:, None]
        flat = acc.reshape(b - a, -1)
        return np.array([math.fsum(col) for col in flat.T])

    parts = _reduce.map_chunks(part, ys.size, ROW_CHUNK, threads)
    if not parts:
        return np.zeros((radii.size, U.shape[1]))
    return _reduce.fsum_parts(parts).reshape(radii.size, U.shape[1])


def ks_functional(space: DiscreteSpace, u, p: float, psi: ScaleFn, r: float,
                  denom: str = "psi_of_r", omega=None, threads: int = 1) -> float:
    """Korevaar-Schoen functional at scale r restricted to Omega.

    ``denom`` selects Psi(r) or Psi(d(x, y)) in the denominator.
    """
    if denom == "psi_of_r":
        return float(ball_sums(space, u, p, [r], omega, None, threads)[0, 0] / eval_scale(psi, r))
    if denom == "psi_of_d":
        return float(ball_sums(space, u, p, [r], omega, psi, threads)[0, 0])
    raise DomainError(f"unknown denominator {denom!r}")


def ks_profile(space: DiscreteSpace, u, p: float, psi: ScaleFn, radii: Sequence[float],
               denom: str = "psi_of_r", omega=None, threads: int = 1) -> np.ndarray:
    """ks_functional at every radius of ``radii`` in one pass."""
    radii = np.asarray(radii, dtype=float)
    if denom == "psi_of_r":
        return ball_sums(space, u, p, radii, omega, None, threads)[:, 0] / eval_scale(psi, radii)
    if denom == "psi_of_d":
        return ball_sums(space, u, p, radii, omega, psi, threads)[:, 0]
    raise DomainError(f"unknown denominator {denom!r}")


# -------------------------------------------------------- kernel functional
def kernel_functional(space: DiscreteSpace, u, p: float, psi: ScaleFn, fam: KernelFamily,
                      eps: float, omega=None, threads: int = 1) -> float:
    """sum over x != y in Omega of m(x) m(y) |u(x)-u(y)|^p rho_eps(x,y) / Psi(d(x,y))."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    u = np.asarray(u, dtype=float)
    om = _omega(space, omega)
    ys = np.nonzero(om)[0]
    w = space.weights
    bounded = fam.kind in ("ks", "ks_hat")

    def part(a, b):
        out = []
        if bounded:
            rows = space.balls(ys[a:b], eps)
        else:
            block = space.dist_block(ys[a:b])
        for k in range(b - a):
            y = ys[a + k]
            if bounded:
                ids, d = rows[k]
                mb = math.fsum(w[ids])
                rho = np.full(ids.size, 1.0 / mb)
                if fam.kind == "ks":
                    rho = rho * eval_scale(fam.psi, np.where(d > 0, d, 1.0)) / eval_scale(fam.psi, eps)
            else:
                d_row = block[k]
                ids = np.nonzero(om & (np.arange(space.n) != y))[0]
                d = d_row[ids]
                rho = kernel_row(fam, space, y, ids, d, eps, d_row)
            sel = om[ids] & (d > 0)
            ids, d, rho = ids[sel], d[sel], rho[sel]
            terms = w[ids] * np.abs(u[ids] - u[y]) ** p * rho / eval_scale(psi, d)
            out.append(w[y] * math.fsum(terms))
        return math.fsum(out)

    return float(_reduce.chunked_sum(part, ys.size, ROW_CHUNK, threads))


# ---------------------------------------------------------------- BBM sums
def _bbm_sums(space: DiscreteSpace, u, p: float, thetas: Sequence[float], omega=None,
              threads: int = 1) -> np.ndarray:
    """sum over x != y in Omega of m(x)m(y)|u(x)-u(y)|^p / (d^{p theta} m(B(y,d)))."""
    thetas = np.asarray(thetas, dtype=float)
    u = np.asarray(u, dtype=float)
    om = _omega(space, omega)
    ys = np.nonzero(om)[0]
    w = space.weights

    def part(a, b):
        block = space.dist_block(ys[a:b])
        acc = np.zeros((b - a, thetas.size))
        for k in range(b - a):
            y = ys[a + k]
            d_row = block[k]
            order = np.argsort(d_row, kind="stable")
            ds = d_row[order]
            cm = np.concatenate([[0.0], np.cumsum(w[order])])
            sel = om & (d_row > 0)
            d = d_row[sel]
            mb = cm[np.searchsorted(ds, d, side="left")]
            base = w[sel] * np.abs(u[sel] - u[y]) ** p / mb
            logd = np.log(d)
            for t, th in enumerate(thetas):
                acc[k, t] = w[y] * math.fsum(base * np.exp(-p * th * logd))
        return np.array([math.fsum(col) for col in acc.T])

    parts = _reduce.map_chunks(part, ys.size, ROW_CHUNK, threads)
    return _reduce.fsum_parts(parts) if parts else np.zeros(thetas.size)


def besov_pp_norm(space: DiscreteSpace, u, p: float, theta: float, omega=None,
                  threads: int = 1) -> float:
    """Full off-diagonal B^theta_{p,p} double sum."""
    return float(_bbm_sums(space, u, p, [theta], omega, threads)[0])


def bbm_values(space: DiscreteSpace, u, p: float, theta_p: float, thetas: Sequence[float],
               omega=None, threads: int = 1) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if np.any(thetas >= theta_p):
        raise DomainError("theta grid must stay strictly below theta_p")
    return (theta_p - thetas) * _bbm_sums(space, u, p, thetas, omega, threads)


# ------------------------------------------------------------------ reports
@dataclass
class SweepReport:
    axis: str
    grid: list
    values: list
    functional: str
    extrapolated_limit: Optional[float] = None
    fit_residual: Optional[float] = None
    sup_value: float = 0.0
    liminf_value: float = 0.0
    domain: Optional[list] = None
    notes: list = field(default_factory=list)

    @classmethod
    def build(cls, axis: str, grid, values, functional: str, domain=None, **kw) -> "SweepReport":
        values = [float(v) for v in values]
        tail = values[len(values) // 2:]
        return cls(axis, [float(g) for g in grid], values, functional,
                   sup_value=max(values), liminf_value=min(tail), domain=domain, **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["axis", "value", "functional"])
        for g, v in zip(self.grid, self.values):
            wr.writerow([repr(g), repr(v), self.functional])
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["liminf_rule"] = "min over the tail half of the grid"
        return json.dumps(d, sort_keys=True)


def extrapolate_linear(x: Sequence[float], y: Sequence[float], max_rel_residual: float = 0.1):
    """Intercept of a least-squares line y = a + b x and the largest residual
    relative to |a|; the intercept is None when that exceeds the threshold."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    fit = linregress(x, y)
    a = float(fit.intercept)
    resid = float(np.max(np.abs(y - (a + fit.slope * x))))
    rel = resid / abs(a) if a != 0 else math.inf
    return (a if rel <= max_rel_residual else None), rel


def bbm_sweep(space: DiscreteSpace, u, p: float, theta_p: float, theta_grid: Sequence[float],
              omega=None, threads: int = 1) -> SweepReport:
    """BBM functional on an ascending theta grid with a linear extrapolation
    in (theta_p - theta) over the last four points."""
    grid = np.asarray(theta_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise DomainError("theta grid must be strictly ascending")
    vals = bbm_values(space, u, p, theta_p, grid, omega, threads)
    rep = SweepReport.build("theta", grid, vals, "bbm",
                            domain=None if omega is None else np.nonzero(_omega(space, omega))[0].tolist())
    if grid.size >= 2 and np.any(vals != 0):
        k = min(4, grid.size)
        lim, rel = extrapolate_linear(theta_p - grid[-k:], vals[-k:])
        rep.extrapolated_limit, rep.fit_residual = lim, rel
        if lim is None:
            rep.notes.append("fit residual above 10% of the extrapolated value")
    elif np.all(vals == 0):
        rep.extrapolated_limit, rep.fit_residual = 0.0, 0.0
    return rep


def ks_sweep(space: DiscreteSpace, u, p: float, psi: ScaleFn, radii: Sequence[float],
             denom: str = "psi_of_r", omega=None, threads: int = 1) -> SweepReport:
    vals = ks_profile(space, u, p, psi, radii, denom, omega, threads)
    return SweepReport.build("r", radii, vals, f"ks-{denom}",
                             domain=None if omega is None else np.nonzero(_omega(space, omega))[0].tolist())


def kernel_sweep(space: DiscreteSpace, u, p: float, psi: ScaleFn, fam: KernelFamily,
                 eps_grid: Sequence[float], omega=None, threads: int = 1) -> SweepReport:
    vals = [kernel_functional(space, u, p, psi, fam, e, omega, threads) for e in eps_grid]
    return SweepReport.build("eps", eps_grid, vals, f"kernel-{fam.name}")


@dataclass
class MonotonicityReport:
    grid: list
    values: list
    sup_value: float
    tail_min: float
    ratio: float
    note: str = ""


def weak_monotonicity(space: DiscreteSpace, u, p: float, psi: ScaleFn, fam: KernelFamily,
                      eps_grid: Sequence[float], threads: int = 1) -> MonotonicityReport:
    """sup over the grid divided by the minimum over its tail half.

    The grid should descend; a function with all values zero gets ratio 1 and
    a note recording the 0/0 convention.
    """
    rep = kernel_sweep(space, u, p, psi, fam, eps_grid, None, threads)
    sup, low = rep.sup_value, rep.liminf_value
    if sup == 0:
        return MonotonicityReport(rep.grid, rep.values, 0.0, 0.0, 1.0, "0/0 taken as 1")
    ratio = sup / low if low > 0 else math.inf
    return MonotonicityReport(rep.grid, rep.values, sup, low, ratio)


# ----------------------------------------------------------- lemma checks
def doubling_ratio(space: DiscreteSpace, r: float) -> float:
    """max over y of m(B(y, 2r)) / m(B(y, r)) at the single scale r."""
    ids = np.arange(space.n)
    return float(np.max(space.ball_masses(ids, 2 * r) / space.ball_masses(ids, r)))


def lemma_inequality_checks(space: DiscreteSpace, u, z: int, r: float, delta: float,
                            h: Optional[Callable] = None, p: float = 2.0,
                            c_D: Optional[float] = None) -> dict:
    """Both sides of the pair-variance and localisation inequalities.

    Pair variance: sum over B(z,r)^2 of m m |u(x)-u(y)|^p against
    2^p m(B) sum_B m |u - u_B|^p.

    Localisation: with U = B(z, r) and a kernel h vanishing for d >= delta
    (default |u(x)-u(y)|^p on d < delta), the sum over U x X of h m m against
    c_D sum over z' in U(2 delta) of m(z')/m(B(z',delta)) times the double
    sum of h over B(z', 2 delta)^2. ``c_D`` defaults to the doubling ratio at
    scale delta, which is what the inequality uses.
    """
    u = np.asarray(u, dtype=float)
    w = space.weights
    B = space.ball(z, r)
    wb = w[B]
    mb = math.fsum(wb)
    uB = math.fsum(wb * u[B]) / mb
    diff = np.abs(u[B][:, None] - u[B][None, :]) ** p
    lhs1 = math.fsum((wb[:, None] * wb[None, :] * diff).ravel())
    rhs1 = 2.0 ** p * mb * math.fsum(wb * np.abs(u[B] - uB) ** p)

    if h is None:
        def h(xs, y, d):
            return np.where(d < delta, np.abs(u[xs] - u[y]) ** p, 0.0)

    def hrow(y, xs):
        d = space.dist_from(int(y), xs)
        vals = np.asarray(h(xs, int(y), d), dtype=float)
        return np.where(d < delta, vals, 0.0)

    all_ids = np.arange(space.n)
    lhs2 = math.fsum(w[y] * math.fsum(w * hrow(y, all_ids)) for y in B)
    in_U = np.zeros(space.n, dtype=bool)
    in_U[B] = True
    near = space.dist_to_set(in_U) < 2 * delta
    if c_D is None:
        c_D = doubling_ratio(space, delta)
    terms = []
    for zz in np.nonzero(near)[0]:
        b2 = space.ball(int(zz), 2 * delta)
        inner = math.fsum(w[y] * math.fsum(w[b2] * hrow(y, b2)) for y in b2)
        terms.append(w[zz] / space.ball_mass(int(zz), delta) * inner)
    rhs2 = c_D * math.fsum(terms)
    slack = 1e-12
    return {"doublevar": {"lhs": lhs1, "rhs": rhs1, "ok": lhs1 <= rhs1 * (1 + slack) + 1e-300},
            "triint": {"lhs": lhs2, "rhs": rhs2, "c_D": c_D,
                       "ok": lhs2 <= rhs2 * (1 + slack) + 1e-300}}


# ------------------------------------------------------- critical exponent
@dataclass
class AlphaEstimate:
    alpha_hat: float
    bracket: tuple
    levels_used: list
    exponent_kind: str
    method_note: str
    flags: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def dyadic_radii(space: DiscreteSpace, floor: float = 4.0) -> np.ndarray:
    """diam/4, diam/8, ... down to ``floor`` lattice spacings.

    Anchoring at the top keeps the coarse radii identical across levels, so
    only the finest radii differ between discretizations.
    """
    h, r = space.spacing, space.diam / 4.0
    out = [r]
    while r / 2.0 >= floor * h * (1 - 1e-12):
        r /= 2.0
        out.append(r)
    return np.array(out[::-1])


def smoothed_noise(space: DiscreteSpace, seed: int = 0, coarse_level: Optional[int] = None,
                   A: float = 2.0) -> np.ndarray:
    """A_delta-smoothed random field that is consistent across levels.

    i.i.d. normal values live on the vertices of a fixed coarse level of the
    same family; every vertex takes the value of its nearest coarse vertex,
    and the result is smoothed by the discrete convolution over a 2 delta-net
    cover with delta half the coarse spacing.
    """
    from .covers import good_cover
    from .mmspace import build_fractal
    from .partition_ext import build_partition, discrete_convolution
    rng = np.random.default_rng(seed)
    if space.kind is None or space.level is None:
        raw = rng.standard_normal(space.n)
        delta = 4.0 * space.spacing
    else:
        if coarse_level is None:
            coarse_level = min(space.level, 3)
        coarse = build_fractal(space.kind, coarse_level)
        vals = rng.standard_normal(coarse.n)
        raw = vals[coarse.tree.query(space.coords)[1]]
        delta = 0.5 * coarse.spacing
    gc = good_cover(space, None, 1.0, A, delta=delta)
    part = build_partition(gc, method="tent", A=A)
    return discrete_convolution(part, raw)


def default_bank(space: DiscreteSpace, p: float = 2.0, size: int = 5, seed: int = 0) -> dict:
    """Coordinates, a capacity potential between opposite boundary pieces and
    smoothed random fields, in that order, truncated or padded to ``size``."""
    from .penergy import boundary_sets, fractal_form, solve_capacity
    bank = {}
    for k in range(space.dim):
        bank[f"coord{k}"] = space.coords[:, k].copy()
    if space.kind is not None:
        E1, E0 = boundary_sets(space)
        form = fractal_form(space, p, normalization="unit")
        bank["potential"] = solve_capacity(form, E1, E0, tol=1e-8).potential
    s = seed
    while len(bank) < size:
        bank[f"noise{s}"] = smoothed_noise(space, seed=s)
        s += 1
    return dict(list(bank.items())[:size])


def estimate_alpha(space_family: Mapping[int, DiscreteSpace], p: float,
                   theta_bracket: tuple = (0.5, 2.5), test_bank=None, budget: int = 20,
                   exponent_kind: str = "alpha_p", growth_tol: float = 0.1,
                   width_tol: float = 0.01, scan_points: int = 9, threads: int = 1) -> AlphaEstimate:
    """Bisection estimate of the Besov critical exponent over a family of levels.

    For each level L, bank function u and radius r of the relative grid, the
    scale-free sum K_L(u, r) = int fint_{B(y,r)} |u(x)-u(y)|^p is computed once.
    Then S_L(theta) = max_r K_L r^{-p theta} (``alpha_p``) or the dyadic sum
    over r (``alpha_pp``). theta is supercritical when, for every bank
    function, the slope of log S_L against log(1/h_L) exceeds ``growth_tol``.

    Above the critical exponent the finest radius dominates and
    S_L ~ h_L^(beta - p theta), so the growth slope reaches ``growth_tol`` at
    theta = alpha + growth_tol / p. The bisection threshold is shifted back by
    that amount; the threshold itself keeps finite-level noise in K_L from
    being read as growth.

    ``test_bank`` is None (default bank), a mapping name -> callable(space)
    or a callable(space) returning such a mapping of vectors.
    """
    levels = sorted(space_family)
    if len(levels) < 3:
        raise DomainError("at least three levels are needed")
    if exponent_kind not in ("alpha_p", "alpha_pp"):
        raise DomainError(f"unknown exponent kind {exponent_kind!r}")
    log_inv_h, tables = [], []
    names = None
    for L in levels:
        sp = space_family[L]
        if test_bank is None:
            bank = default_bank(sp, p)
        elif callable(test_bank):
            bank = test_bank(sp)
        else:
            bank = {k: f(sp) for k, f in test_bank.items()}
        names = list(bank)
        U = np.column_stack([bank[k] for k in names])
        radii = dyadic_radii(sp)
        K = ball_sums(sp, U, p, radii, threads=threads)
        tables.append((radii, K))
        log_inv_h.append(-math.log(sp.spacing))
    x = np.array(log_inv_h)

    def slopes(theta):
        S = []
        for radii, K in tables:
            scaled = K * radii[:, None] ** (-p * theta)
            S.append(scaled.max(axis=0) if exponent_kind == "alpha_p" else scaled.sum(axis=0))
        S = np.array(S)
        out = []
        for c in range(S.shape[1]):
            if np.all(S[:, c] > 0):
                out.append(float(linregress(x, np.log(S[:, c])).slope))
            else:
                out.append(-math.inf)
        return out

    def super_(theta):
        return min(slopes(theta)) > growth_tol

    flags = []
    lo, hi = map(float, theta_bracket)
    scan = np.linspace(lo, hi, scan_points)
    cls = [super_(t) for t in scan]
    if not cls[-1]:
        flags.append("upper end of the bracket is subcritical")
        return AlphaEstimate(hi, (hi, math.inf), levels, exponent_kind, _note(growth_tol, p), flags,
                             {"names": names})
    if cls[0]:
        flags.append("lower end of the bracket is supercritical")
        return AlphaEstimate(lo, (-math.inf, lo), levels, exponent_kind, _note(growth_tol, p), flags,
                             {"names": names})
    first_super = cls.index(True)
    last_sub = max(i for i, c in enumerate(cls) if not c)
    if last_sub > first_super:
        flags.append("non-monotone classification; bracket widened")
        a, b = float(scan[first_super - 1]), float(scan[last_sub + 1])
    else:
        a, b = float(scan[first_super - 1]), float(scan[first_super])
    steps = 0
    while b - a > width_tol and steps < budget and not flags:
        mid = 0.5 * (a + b)
        if super_(mid):
            b = mid
        else:
            a = mid
        steps += 1
    shift = growth_tol / p
    info = {"names": names, "at_threshold": dict(zip(names, slopes(0.5 * (a + b)))),
            "threshold_bracket": [a, b]}
    return AlphaEstimate(0.5 * (a + b) - shift, (a - shift, b - shift), levels, exponent_kind,
                         _note(growth_tol, p), flags, info)


def _note(tol: float, p: float) -> str:
    return (f"supercritical when every bank function has growth slope > {tol} of log S_L "
            f"against log(1/h_L); threshold shifted by {tol}/{p:g}; "
            f"radii diam/4 * 2^-j down to 4h")
