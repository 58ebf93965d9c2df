"""Scale functions and mollifier kernel families.

A scale function is an increasing bijection of (0, inf) with two-sided power
bounds. Kernel families are indexed by a scale parameter eps and feed the
nonlocal functionals in :mod:`fbz.besov`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .mmspace import DiscreteSpace


# ------------------------------------------------------------------ scale fns
@dataclass(frozen=True)
class ScaleFn:
    """Power or continuous piecewise-power scale function.

    Use :meth:`power` or :meth:`piecewise` rather than the raw constructor.
    """

    kind: str
    betas: tuple
    breaks: tuple = ()
    coeffs: tuple = (1.0,)
    C_psi: float = 1.0

    @property
    def beta1(self) -> float:
        return min(self.betas)

    @property
    def beta2(self) -> float:
        return max(self.betas)

    @property
    def beta(self) -> float:
        if self.kind != "power":
            raise AttributeError("only power scale functions have a single exponent")
        return self.betas[0]

    @classmethod
    def power(cls, beta: float) -> "ScaleFn":
        if not beta > 0:
            raise DomainError("power exponent must be positive")
        return cls("power", (float(beta),))

    @classmethod
    def piecewise(cls, breaks: Sequence[float], betas: Sequence[float],
                  coeffs: Optional[Sequence[float]] = None) -> "ScaleFn":
        """Psi(r) = coeffs[k] * r**betas[k] on the k-th interval cut by ``breaks``.

        With ``coeffs`` omitted the first coefficient is 1 and the others are
        chosen for continuity. Explicit coefficients are validated.
        """
        breaks = tuple(float(b) for b in breaks)
        betas = tuple(float(b) for b in betas)
        if len(betas) != len(breaks) + 1:
            raise DomainError("need exactly one more exponent than breakpoints")
        if any(b <= 0 for b in breaks) or any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise DomainError("breakpoints must be positive and strictly increasing")
        if any(not b > 0 for b in betas):
            raise DomainError("exponents must be positive for a strictly increasing function")
        if coeffs is None:
            c = [1.0]
            for b, lo, hi in zip(breaks, betas, betas[1:]):
                c.append(c[-1] * b ** (lo - hi))
            coeffs = c
        coeffs = tuple(float(c) for c in coeffs)
        if len(coeffs) != len(betas) or any(not c > 0 for c in coeffs):
            raise DomainError("coefficients must be positive, one per piece")
        for k, b in enumerate(breaks):
            left = coeffs[k] * b ** betas[k]
            right = coeffs[k + 1] * b ** betas[k + 1]
            if abs(left - right) > 1e-12 * max(abs(left), abs(right)):
                raise DomainError(f"discontinuous at breakpoint {b}: {left} vs {right}")
        return cls("piecewise_power", betas, breaks, coeffs)

    def __call__(self, r):
        return eval_scale(self, r)

    def spec(self) -> str:
        if self.kind == "power":
            return f"beta={self.betas[0]:g}"
        return f"breaks={list(self.breaks)} betas={list(self.betas)}"


def eval_scale(psi: ScaleFn, r):
    """Evaluate Psi at a scalar or array of positive radii."""
    arr = np.asarray(r, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("scale functions are defined for positive r only")
    if psi.kind == "power":
        out = arr ** psi.betas[0]
    else:
        piece = np.searchsorted(np.asarray(psi.breaks), arr, side="right")
        c = np.asarray(psi.coeffs)[piece]
        b = np.asarray(psi.betas)[piece]
        out = c * arr ** b
    return float(out) if np.ndim(out) == 0 else out


def check_scale_bounds(psi: ScaleFn, n: int = 2000, seed: int = 0) -> float:
    """Largest violation of the two-sided power bounds on random pairs (<= 0 means ok)."""
    rng = np.random.default_rng(seed)
    r = np.exp(rng.uniform(-8, 8, n))
    big = r * np.exp(rng.uniform(0, 6, n))
    ratio = eval_scale(psi, big) / eval_scale(psi, r)
    lo = (big / r) ** psi.beta1 / psi.C_psi
    hi = psi.C_psi * (big / r) ** psi.beta2
    return float(max(np.max(np.log(lo / ratio)), np.max(np.log(ratio / hi))))


# ------------------------------------------------------------------- kernels
@dataclass(frozen=True)
class KernelFamily:
    """Mollifier family rho_eps(x, y).

    kinds: ``bbm`` (needs theta_p and p; schedule defaults to theta_p - eps),
    ``ks`` (needs psi), ``ks_hat`` and ``custom`` (evaluator(space, i, j, eps)).
    """

    kind: str
    theta_p: float = 1.0
    p: float = 2.0
    psi: Optional[ScaleFn] = None
    schedule: Optional[Callable[[float], float]] = field(default=None, compare=False)
    evaluator: Optional[Callable] = field(default=None, compare=False)

    @classmethod
    def bbm(cls, theta_p: float, p: float, schedule=None) -> "KernelFamily":
        if theta_p < 1:
            raise DomainError("theta_p must be at least 1")
        return cls("bbm", theta_p=float(theta_p), p=float(p), schedule=schedule)

    @classmethod
    def ks(cls, psi: ScaleFn) -> "KernelFamily":
        return cls("ks", psi=psi)

    @classmethod
    def ks_hat(cls) -> "KernelFamily":
        return cls("ks_hat")

    @classmethod
    def custom(cls, evaluator) -> "KernelFamily":
        return cls("custom", evaluator=evaluator)

    def theta(self, eps: float) -> float:
        if self.schedule is not None:
            return float(self.schedule(eps))
        return self.theta_p - eps

    @property
    def name(self) -> str:
        return self.kind.replace("_", "-")


def strict_masses(space: DiscreteSpace, y: int, d_row: np.ndarray, radii) -> np.ndarray:
    """m(B(y, t)) for each t in ``radii``, given all distances ``d_row`` from y."""
    order = np.argsort(d_row, kind="stable")
    ds = d_row[order]
    cm = np.concatenate([[0.0], np.cumsum(space.weights[order])])
    return cm[np.searchsorted(ds, np.asarray(radii), side="left")]


def kernel_row(fam: KernelFamily, space: DiscreteSpace, y: int, xs: np.ndarray,
               d: np.ndarray, eps: float, d_row: Optional[np.ndarray] = None) -> np.ndarray:
    """rho_eps(x, y) for all x in ``xs`` at distances ``d`` from y.

    ``d_row`` (distances from y to every point) is needed for families whose
    normalization involves balls of radius d(x, y) or eps; it is computed when
    omitted.
    """
    xs = np.asarray(xs)
    d = np.asarray(d, dtype=float)
    if fam.kind == "custom":
        return np.array([float(fam.evaluator(space, int(x), int(y), eps)) for x in xs])
    if d_row is None:
        d_row = space.dist_from(y)
    if fam.kind in ("ks", "ks_hat"):
        inside = d < eps
        mb = strict_masses(space, y, d_row, [eps])[0]
        out = np.where(inside, 1.0 / mb, 0.0)
        if fam.kind == "ks":
            safe = np.where(d > 0, d, 1.0)
            out = out * np.where(d > 0, eval_scale(fam.psi, safe), 0.0) / eval_scale(fam.psi, eps)
        return out
    if fam.kind == "bbm":
        th = fam.theta(eps)
        pos = d > 0
        out = np.zeros_like(d)
        if th >= fam.theta_p:
            return out
        mb = strict_masses(space, y, d_row, d[pos])
        out[pos] = (fam.theta_p - th) * d[pos] ** (fam.p * (fam.theta_p - th)) / mb
        return out
    raise DomainError(f"unknown kernel kind {fam.kind!r}")


def eval_kernel(fam: KernelFamily, space: DiscreteSpace, i: int, j: int, eps: float) -> float:
    """rho_eps(x_i, y_j); the second argument is the ball center y."""
    if fam.kind == "bbm" and i == j:
        raise DomainError("the BBM kernel is undefined on the diagonal")
    d = space.dist(j, i)
    return float(kernel_row(fam, space, j, np.array([i]), np.array([d]), eps)[0])


# ---------------------------------------------------------------- envelopes
@dataclass
class EnvelopeCertificate:
    family: str
    eps_grid: list
    d_j: dict  # eps -> list of d_j values (A2 envelope, s = eps)
    d_j_unit: dict  # eps -> list of d_j values (A1 envelope, s = 1)
    d_sum_per_eps: dict
    d_sum_unit_per_eps: dict
    C_rho: float
    tail_profile: dict  # (eps, delta) -> tail value
    lower_const: float
    lower_bound_ok: bool
    which_assumption: str
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        report = {
            "family": self.family,
            "assumption": self.which_assumption,
            "eps_grid": self.eps_grid,
            "d_sum_per_eps": {repr(k): v for k, v in self.d_sum_per_eps.items()},
            "tail_table": {f"{e!r},{dl!r}": v for (e, dl), v in self.tail_profile.items()},
            "lower_const": self.lower_const if math.isfinite(self.lower_const) else None,
        }
        return json.dumps(report, sort_keys=True)


def _annulus_index(d: np.ndarray, s: float, j_max: int) -> np.ndarray:
    """j with 2^-j s <= d < 2^(-j+1) s, or 0 when outside 1..j_max."""
    j = np.zeros(d.shape, dtype=np.int64)
    pos = (d > 0) & (d < s)
    jj = np.floor(np.log2(s / d[pos])).astype(np.int64) + 1
    lo = np.ldexp(s, -jj)
    jj = np.where(d[pos] < lo, jj + 1, jj)
    hi = np.ldexp(s, -jj + 1)
    jj = np.where(d[pos] >= hi, jj - 1, jj)
    jj = np.where(jj > j_max, 0, jj)
    j[pos] = jj
    return j


def _bbm_nu_tail(fam: KernelFamily, eps: float, t: np.ndarray) -> np.ndarray:
    """nu_eps((t, inf)) for the built-in BBM measure nu(dt) = p th (th_p - th) t^(-p th - 1) dt."""
    th = fam.theta(eps)
    return (fam.theta_p - th) * t ** (-fam.p * th)


def verify_assumption(fam: KernelFamily, space: DiscreteSpace, eps_grid: Sequence[float],
                      psi: ScaleFn, tail_tol: float = 0.05,
                      deltas: Optional[Sequence[float]] = None) -> EnvelopeCertificate:
    """Finite-grid evidence for the kernel assumptions.

    For every eps the tightest dyadic envelopes (in absolute scale and in
    units of eps), the tail integrals outside B(y, delta) and the measured
    lower-bound constant are computed over all ordered pairs.
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise DomainError("eps grid must be nonempty")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise DomainError("eps grid must be strictly descending")
    diam, h = space.diam, space.spacing
    if deltas is None:
        deltas = [diam / 2 ** k for k in range(1, 5)]
    n = space.n
    ids = np.arange(n)
    d_j, d_j_unit, dsum, dsum_unit, tails = {}, {}, {}, {}, {}
    lower_const = 0.0
    supported_in_eps = True
    for eps in eps_grid:
        jm2 = max(1, math.ceil(math.log2(max(eps, h) / h)) + 1)
        jm1 = max(1, math.ceil(math.log2(max(1.0, diam) / h)) + 1)
        env2 = np.zeros(jm2 + 1)
        env1 = np.zeros(jm1 + 1)
        tail = np.zeros(len(deltas))
        for y in range(n):
            d_row = space.dist_from(y)
            mask = ids != y
            xs, d = ids[mask], d_row[mask]
            rho = kernel_row(fam, space, y, xs, d, eps, d_row)
            if np.any(rho < 0):
                raise DomainError("kernel produced a negative value")
            if np.any(rho[d >= eps] > 0):
                supported_in_eps = False
            # A2 envelope in units of eps
            j2 = _annulus_index(d, eps, jm2)
            sel = j2 > 0
            if sel.any():
                mb = strict_masses(space, y, d_row, np.ldexp(eps, -j2[sel] + 1))
                np.maximum.at(env2, j2[sel], rho[sel] * mb)
            # A1 envelope in absolute scale, pairs with d < 1
            j1 = _annulus_index(d, 1.0, jm1)
            sel = j1 > 0
            if sel.any():
                mb = strict_masses(space, y, d_row, np.ldexp(1.0, -j1[sel] + 1))
                np.maximum.at(env1, j1[sel], rho[sel] * mb)
            w = rho / eval_scale(psi, d) * space.weights[xs]
            for k, dl in enumerate(deltas):
                tail[k] = max(tail[k], math.fsum(w[d >= dl]))
            # lower bound on pairs with d <= 1 inside B(y, eps)
            near = (d <= 1.0) & (d < eps)
            if near.any():
                mb_eps = strict_masses(space, y, d_row, [eps])[0]
                # same operation order as the KS kernel so the constant is exact
                target = (1.0 / mb_eps) * eval_scale(psi, d[near]) / eval_scale(psi, eps)
                if fam.kind == "bbm":
                    # alternative bound through the built-in tail measure nu
                    mbd = strict_masses(space, y, d_row, d[near])
                    alt = eval_scale(psi, d[near]) * _bbm_nu_tail(fam, eps, d[near]) / mbd
                    target = np.minimum(target, alt)
                with np.errstate(divide="ignore", invalid="ignore"):
                    q = np.where(rho[near] > 0, target / rho[near], np.inf)
                lower_const = max(lower_const, float(np.max(q)))
        d_j[eps] = env2[1:].tolist()
        d_j_unit[eps] = env1[1:].tolist()
        dsum[eps] = math.fsum(env2[1:])
        dsum_unit[eps] = math.fsum(env1[1:])
        for k, dl in enumerate(deltas):
            tails[(eps, float(dl))] = float(tail[k])
    lower_ok = bool(math.isfinite(lower_const) and lower_const > 0)
    notes = []
    if fam.kind == "custom":
        notes.append("custom kernels are checked against the eps-ball lower bound only")
    if lower_ok and supported_in_eps and all(math.isfinite(v) for v in dsum.values()):
        which = "A2"
        c_rho = max(max(dsum.values()), lower_const)
    else:
        tails_ok = True
        for dl in deltas:
            seq = [tails[(e, float(dl))] for e in eps_grid]
            ref = max(seq[0], 1e-300)
            if any(b > a * (1 + 1e-12) for a, b in zip(seq, seq[1:])) or seq[-1] > tail_tol * ref:
                tails_ok = False
        if lower_ok and tails_ok:
            which = "A1"
            c_rho = max(max(dsum_unit.values()), lower_const)
        else:
            which = "neither"
            c_rho = max([*dsum.values(), *dsum_unit.values(), 1.0])
    if not lower_ok:
        lower_const = math.inf
    return EnvelopeCertificate(fam.name, eps_grid, d_j, d_j_unit, dsum, dsum_unit, float(c_rho),
                               tails, float(lower_const), lower_ok, which, notes)
