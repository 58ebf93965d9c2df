"""Discrete p-energy forms on weighted graphs.

The energy of u is ``sum_e w_e |u_i - u_j|^p``; each edge's contribution is
split evenly between its endpoints to form the energy measure. Capacity
potentials are computed by damped Newton on a smoothed energy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve, MatrixRankWarning

from ._reduce import chunked_sum
from .errors import DomainError, FormatError, SolverError
from .mmspace import DiscreteSpace, FAMILIES, build_fractal

EDGE_CHUNK = 1 << 16


@dataclass(frozen=True)
class EnergyForm:
    """Weighted graph p-energy. Edges are stored with i < j, without duplicates."""

    p: float
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    vertex_count: int

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError("p must exceed 1")
        if np.any(self.i >= self.j):
            raise DomainError("edges must satisfy i < j")
        if np.any(~(self.w > 0)) or not np.all(np.isfinite(self.w)):
            raise DomainError("edge weights must be finite and positive")
        key = self.i.astype(np.int64) * self.vertex_count + self.j
        if np.unique(key).size != key.size:
            raise DomainError("duplicate edges")

    @classmethod
    def from_edges(cls, p: float, edges, weights, vertex_count: int) -> "EnergyForm":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.broadcast_to(np.asarray(weights, dtype=float), (e.shape[0],)).copy()
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        return cls(float(p), lo, hi, w, int(vertex_count))

    @property
    def n_edges(self) -> int:
        return self.i.shape[0]

    def with_p(self, p: float) -> "EnergyForm":
        return EnergyForm(float(p), self.i, self.j, self.w, self.vertex_count)

    def adjacency(self) -> sparse.csr_matrix:
        n = self.vertex_count
        return sparse.coo_matrix((np.r_[self.w, self.w], (np.r_[self.i, self.j], np.r_[self.j, self.i])),
                                 shape=(n, n)).tocsr()

    def restrict(self, keep) -> "EnergyForm":
        """Subgraph on the vertices where ``keep`` is true (vertex ids unchanged)."""
        keep = np.asarray(keep, dtype=bool)
        sel = keep[self.i] & keep[self.j]
        return EnergyForm(self.p, self.i[sel], self.j[sel], self.w[sel], self.vertex_count)


def _check_u(form: EnergyForm, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (form.vertex_count,):
        raise DomainError(f"function has length {u.shape}, form has {form.vertex_count} vertices")
    return u


def energy(form: EnergyForm, u, threads: int = 1) -> float:
    u = _check_u(form, u)

    def part(a, b):
        return math.fsum(form.w[a:b] * np.abs(u[form.i[a:b]] - u[form.j[a:b]]) ** form.p)

    return float(chunked_sum(part, form.n_edges, EDGE_CHUNK, threads))


@dataclass(frozen=True)
class EnergyMeasure:
    per_vertex: np.ndarray

    def mass(self, ids=None) -> float:
        if ids is None:
            return math.fsum(self.per_vertex)
        ids = np.asarray(ids)
        return math.fsum(self.per_vertex[ids])

    @property
    def total(self) -> float:
        return self.mass()


def edge_energies(form: EnergyForm, u) -> np.ndarray:
    u = _check_u(form, u)
    return form.w * np.abs(u[form.i] - u[form.j]) ** form.p


def energy_measure(form: EnergyForm, u) -> EnergyMeasure:
    e = 0.5 * edge_energies(form, u)
    n = form.vertex_count
    return EnergyMeasure(np.bincount(form.i, e, n) + np.bincount(form.j, e, n))


def contraction_check(form: EnergyForm, u, phi_x: Sequence[float], phi_y: Sequence[float]):
    """Compare E(phi(u)) with E(u) for a piecewise-linear phi.

    phi is given by breakpoints ``phi_x`` (increasing) and values ``phi_y``;
    it is extended by constants outside the table. Returns ``(ok, slack)``
    with slack = E(u) - E(phi(u)).
    """
    xs = np.asarray(phi_x, dtype=float)
    ys = np.asarray(phi_y, dtype=float)
    if xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise DomainError("phi table needs at least two strictly increasing breakpoints")
    slopes = np.diff(ys) / np.diff(xs)
    if np.any(np.abs(slopes) > 1 + 1e-12):
        raise DomainError("phi must have slopes in [-1, 1]")
    u = _check_u(form, u)
    e_u = energy(form, u)
    e_phi = energy(form, np.interp(u, xs, ys))
    slack = e_u - e_phi
    return bool(e_phi <= e_u * (1 + 1e-12) + 1e-300), slack


# ------------------------------------------------------------------ capacity
@dataclass(frozen=True)
class CapacitySolution:
    potential: np.ndarray
    value: float
    iterations: int
    kkt_residual: float

    def to_json(self) -> str:
        return json.dumps({"value": self.value, "iterations": self.iterations,
                           "kkt_residual": self.kkt_residual}, sort_keys=True)


def _laplacian(n, i, j, a):
    deg = np.bincount(i, a, n) + np.bincount(j, a, n)
    return sparse.coo_matrix((np.r_[-a, -a, deg], (np.r_[i, j, np.arange(n)], np.r_[j, i, np.arange(n)])),
                             shape=(n, n)).tocsr()


def _plaplacian(form, u):
    """Gradient of the unsmoothed energy and the flux scale used for normalization."""
    n = form.vertex_count
    d = u[form.i] - u[form.j]
    f = form.w * form.p * np.sign(d) * np.abs(d) ** (form.p - 1)
    g = np.bincount(form.i, f, n) - np.bincount(form.j, f, n)
    scale = np.bincount(form.i, np.abs(f), n) + np.bincount(form.j, np.abs(f), n)
    return g, float(scale.max()) if scale.size else 0.0


def kkt_residual(form: EnergyForm, u, free: np.ndarray) -> float:
    """Max-norm of the discrete p-Laplacian on free vertices, relative to the flux scale."""
    g, scale = _plaplacian(form, u)
    if free.size == 0 or scale == 0.0:
        return 0.0
    return float(np.max(np.abs(g[free])) / scale)


def solve_capacity(form: EnergyForm, E1, E0, tol: float = 1e-9, max_iter: int = 400) -> CapacitySolution:
    """Minimize the energy over functions equal to 1 on E1 and 0 on E0.

    The reported residual is the max-norm of the p-Laplacian over free
    vertices divided by the largest total edge flux at a vertex, so it is
    invariant under rescaling of weights.
    """
    n = form.vertex_count
    E1 = np.unique(np.asarray(E1, dtype=np.int64))
    E0 = np.unique(np.asarray(E0, dtype=np.int64))
    if E1.size == 0 or E0.size == 0:
        raise DomainError("E1 and E0 must be nonempty")
    if np.intersect1d(E1, E0).size:
        raise DomainError("E1 and E0 must be disjoint")
    u = np.zeros(n)
    u[E1] = 1.0
    fixed = np.zeros(n, dtype=bool)
    fixed[E1] = fixed[E0] = True
    # free vertices in components without boundary data carry no energy
    _, comp = csgraph.connected_components(form.adjacency(), directed=False)
    has_fixed = np.zeros(comp.max() + 1, dtype=bool)
    has_fixed[comp[fixed]] = True
    free = np.nonzero(~fixed & has_fixed[comp])[0]
    if free.size == 0:
        return CapacitySolution(u, energy(form, u), 0, 0.0)

    pos = np.full(n, -1)
    pos[free] = np.arange(free.size)

    def newton_system(a):
        lap = _laplacian(n, form.i, form.j, a)
        return lap[free][:, free].tocsc(), lap[free][:, fixed]

    # p = 2 start (exact for p = 2)
    A, B = newton_system(form.w * 2.0)
    u[free] = spsolve(A, -(B @ u[fixed]))
    iters = 1
    if form.p != 2.0:
        u, iters = _newton_continuation(form, u, free, fixed, newton_system, tol, max_iter)
    u = np.clip(u, 0.0, 1.0)
    res = kkt_residual(form, u, free)
    if not res <= tol:
        raise SolverError(f"capacity solver stopped at residual {res:.3e} > {tol:.1e}", res, iters)
    return CapacitySolution(u, energy(form, u), iters, res)


def _newton_continuation(form, u, free, fixed, newton_system, tol, max_iter):
    import warnings

    p = form.p
    n = form.vertex_count
    d0 = u[form.i] - u[form.j]
    mean_sq = float(np.mean(d0 ** 2)) if d0.size else 0.0
    if not mean_sq > 0:
        mean_sq = 1.0
    # continuation runs from 1e-2 to 1e-12 in units of the mean squared increment
    mu, mu_end = 1e-2 * mean_sq, 1e-12 * mean_sq
    total = 0

    def fval(v, mu_):
        dd = v[form.i] - v[form.j]
        return math.fsum(form.w * (dd * dd + mu_) ** (p / 2))

    def grad(v, mu_):
        dd = v[form.i] - v[form.j]
        f = form.w * p * (dd * dd + mu_) ** (p / 2 - 1) * dd
        g = np.bincount(form.i, f, n) - np.bincount(form.j, f, n)
        sc = np.bincount(form.i, np.abs(f), n) + np.bincount(form.j, np.abs(f), n)
        return g[free], dd, float(sc.max()) + 1e-300

    while True:
        for _ in range(max_iter):
            g, dd, scale = grad(u, mu)
            if np.max(np.abs(g)) <= 0.1 * tol * scale:
                break
            s = dd * dd
            a = form.w * p * (s + mu) ** (p / 2 - 2) * (mu + (p - 1) * s)
            A, _ = newton_system(a)
            step = None
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", MatrixRankWarning)
                    step = -spsolve(A, g)
                if not np.all(np.isfinite(step)) or float(step @ g) >= 0:
                    step = None
            except (MatrixRankWarning, RuntimeError):
                step = None
            if step is None:
                # gradient fallback, diagonally scaled
                diag = A.diagonal()
                step = -g / np.where(diag > 0, diag, 1.0)
            f0 = fval(u, mu)
            slope = float(step @ g)
            t = 1.0
            trial = u.copy()
            trial[free] += step
            # near the optimum energy differences drop below rounding; a full
            # step that reduces the gradient is then accepted directly
            if np.max(np.abs(grad(trial, mu)[0])) < 0.5 * np.max(np.abs(g)):
                u = trial
                total += 1
                continue
            while t > 1e-14:
                trial = u.copy()
                trial[free] += t * step
                if fval(trial, mu) <= f0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            total += 1
            if t <= 1e-14:
                break
            u = trial
        if mu <= mu_end and (kkt_residual(form, u, free) <= tol or mu <= 1e-16 * mu_end):
            break
        mu = mu / 10.0
    return u, total


def capacity_value(form, E1, E0, tol=1e-9) -> float:
    return solve_capacity(form, E1, E0, tol).value


# -------------------------------------------------------- fractal energy forms
_KNOWN_SIGMA_P2 = {"interval": 2.0, "square": 1.0, "vicsek": 3.0, "gasket": 5.0 / 3.0}


def boundary_sets(space: DiscreteSpace):
    """Two opposite boundary pieces used for capacities and potentials."""
    c = space.coords
    kind = space.kind
    tiny = 1e-9
    if kind == "interval" or space.dim == 1:
        return np.array([int(np.argmin(c[:, 0]))]), np.array([int(np.argmax(c[:, 0]))])
    if kind in ("vicsek",):
        a = np.nonzero(np.all(np.abs(c - [0.0, 0.0]) < tiny, axis=1))[0]
        b = np.nonzero(np.all(np.abs(c - [1.0, 1.0]) < tiny, axis=1))[0]
        return a, b
    if kind == "gasket":
        a = np.nonzero(np.all(np.abs(c - [0.0, 0.0]) < tiny, axis=1))[0]
        b = np.nonzero(np.abs(c[:, 1]) < tiny)[0]
        b = b[np.abs(c[b, 0] - 1.0) < tiny]
        top = np.nonzero(c[:, 1] > c[:, 1].max() - tiny)[0]
        return a, np.union1d(b, top)
    lo = np.nonzero(c[:, 0] < c[:, 0].min() + tiny)[0]
    hi = np.nonzero(c[:, 0] > c[:, 0].max() - tiny)[0]
    return lo, hi


def renormalization_factor(kind: str, p: float, level: int = 3) -> float:
    """Per-level energy multiplier sigma so that sigma^n-weighted energies stay bounded.

    Closed forms: interval 2^(p-1), square 2^(p-2), Vicsek 3^(p-1), gasket
    5/3 at p = 2. Other cases use the ratio of unit-weight capacities between
    opposite boundary pieces at two consecutive levels.
    """
    if kind == "interval":
        return 2.0 ** (p - 1)
    if kind == "square":
        return 2.0 ** (p - 2)
    if kind == "vicsek":
        return 3.0 ** (p - 1)
    if kind == "gasket" and p == 2.0:
        return 5.0 / 3.0
    caps = []
    for lv in (level, level + 1):
        s = build_fractal(kind, lv)
        f = fractal_form(s, p, normalization="unit")
        a, b = boundary_sets(s)
        caps.append(solve_capacity(f, a, b, tol=1e-8).value)
    return caps[0] / caps[1]


def walk_dimension(kind: str, p: float) -> float:
    """Exponent beta_p with Psi(r) = r^beta_p matching the renormalized energy."""
    fam = FAMILIES[kind]
    return math.log(len(fam.maps) * renormalization_factor(kind, p)) / math.log(fam.scale)


def fractal_form(space: DiscreteSpace, p: float, normalization: str = "renormalized",
                 sigma: Optional[float] = None) -> EnergyForm:
    """Cell-adjacency energy form on a pre-fractal.

    ``normalization='unit'`` uses unit weights; ``'renormalized'`` multiplies
    every edge by sigma^level.
    """
    if space.edges is None:
        raise DomainError("space has no cell-adjacency edges")
    if normalization == "unit":
        w = 1.0
    elif normalization == "renormalized":
        if sigma is None:
            sigma = renormalization_factor(space.kind, p)
        w = float(sigma) ** space.level
    else:
        raise DomainError(f"unknown normalization {normalization!r}")
    return EnergyForm.from_edges(p, space.edges, w, space.n)


# --------------------------------------------------------------- measurements
def measure_PI(form: EnergyForm, space: DiscreteSpace, psi, ball_samples, test_bank, A_P: float = 1.0) -> dict:
    """Smallest constant making the Poincare inequality hold on the samples.

    Samples whose energy term vanishes while the oscillation does not are
    reported as violations.
    """
    from .scale_kernel import eval_scale

    if A_P not in (1, 2, 1.0, 2.0):
        raise DomainError("A_P must be 1 or 2")
    if len(test_bank) == 0:
        raise DomainError("test bank must be nonempty")
    p = form.p
    worst, violations, used = 0.0, [], 0
    gammas = [energy_measure(form, u).per_vertex for u in test_bank]
    for x, r in ball_samples:
        ids = space.ball(int(x), float(r))
        big = space.ball(int(x), float(A_P * r))
        m = space.weights[ids]
        for k, u in enumerate(test_bank):
            u = np.asarray(u, dtype=float)
            ub = math.fsum(m * u[ids]) / math.fsum(m)
            lhs = math.fsum(m * np.abs(u[ids] - ub) ** p)
            gam = math.fsum(gammas[k][big])
            if gam == 0.0:
                if lhs > 1e-14 * max(1.0, math.fsum(m * np.abs(u[ids]) ** p)):
                    violations.append({"center": int(x), "r": float(r), "bank_index": k, "lhs": lhs})
                continue
            used += 1
            worst = max(worst, lhs / (eval_scale(psi, r) * gam))
    return {"C_P_hat": worst, "A_P": float(A_P), "violations": violations, "evaluated": used}


def lattice_ops_check(form: EnergyForm, u, v) -> dict:
    """Measured constants for the min/max and quotient energy inequalities."""
    u = _check_u(form, u)
    v = _check_u(form, v)
    eu, ev = energy(form, u), energy(form, v)
    lhs = energy(form, np.minimum(u, v)) + energy(form, np.maximum(u, v))
    rhs = eu + ev
    out = {"lhs": lhs, "rhs": rhs, "C_lattice": (lhs / rhs) if rhs > 0 else (0.0 if lhs == 0 else math.inf)}
    if np.all(u >= 0) and np.all(v >= 0):
        s = u + v
        nz = u != 0
        if np.all(s[nz] > 0):
            q = np.where(nz, u / np.where(s > 0, s, 1.0), 0.0)
            eq = energy(form, q)
            out["C_quotient"] = (eq / rhs) if rhs > 0 else (0.0 if eq == 0 else math.inf)
            out["quotient_delta"] = float(s[nz].min()) if nz.any() else math.inf
    return out


# ------------------------------------------------------------------------ io
def save_form(form: EnergyForm, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"fbz-form v1 p={format(form.p, '.17g')} E={form.n_edges}\n")
        fh.write(f"# vertices {form.vertex_count}\n")
        for a, b, w in zip(form.i, form.j, form.w):
            fh.write(f"{a} {b} {format(float(w), '.17g')}\n")


def load_form(path) -> EnergyForm:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) < 4 or head[:2] != ["fbz-form", "v1"]:
            raise FormatError(f"bad header in {path}")
        fields = dict(tok.split("=", 1) for tok in head[2:])
        p, count = float(fields["p"]), int(fields["E"])
        rows, nv = [], None
        for line in fh:
            if line.startswith("# vertices"):
                nv = int(line.split()[2])
            elif line.strip() and not line.startswith("#"):
                rows.append(line.split())
    if len(rows) != count:
        raise FormatError(f"{path}: header announces {count} edges, found {len(rows)}")
    e = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
    w = np.array([float(r[2]) for r in rows])
    if nv is None:
        nv = int(e.max()) + 1 if e.size else 0
    return EnergyForm.from_edges(p, e, w, nv)
