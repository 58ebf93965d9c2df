"""Controlled partitions of unity, discrete convolution, reflection and extension."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.optimize import minimize_scalar

from .covers import (WhitneyCover, _meeting_pairs, _set_diam, as_mask, closure_mask,
                     whitney_cover)
from .errors import CertificateError, CoverError, DomainError
from .mmspace import DiscreteSpace
from .penergy import EnergyForm, energy, energy_measure, solve_capacity
from .scale_kernel import ScaleFn, eval_scale


# --------------------------------------------------------------- partitions
@dataclass
class PartitionOfUnity:
    space: DiscreteSpace
    U: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    A: float
    method: str
    phi: sparse.csr_matrix
    psi: sparse.csr_matrix
    N1: int
    energy_per_ball: np.ndarray = field(default_factory=lambda: np.zeros(0))
    low_energy_ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return self.centers.size

    def sums(self) -> np.ndarray:
        return np.asarray(self.psi.sum(axis=0)).ravel()

    def check(self) -> dict:
        """Partition-sum error on U, range, support containment and the
        lower bound on the 3-dilates."""
        s = self.sums()
        err = float(np.max(np.abs(s[self.U] - 1.0))) if self.U.any() else 0.0
        data = self.psi.data
        in_range = bool(np.all((data >= 0) & (data <= 1 + 1e-15)))
        support = _support_ok(self)
        low = _lower_bound_margin(self)
        return {"sum_err": err, "range_ok": in_range, "support_ok": support,
                "lower_bound_margin": low, "N1": self.N1}

    def to_json(self) -> str:
        ratio = self.low_energy_ratio
        return json.dumps({"method": self.method, "A": self.A, "n_balls": len(self),
                           "check": self.check(),
                           "max_low_energy_ratio": float(ratio.max()) if ratio.size else None},
                          sort_keys=True)


def _support_ok(part: PartitionOfUnity) -> bool:
    sp = part.space
    coo = part.psi.tocoo()
    d = sp._euclid_pairs(part.centers[coo.row], coo.col) if sp.metric_mode == "euclidean" else \
        np.array([sp.dist(int(part.centers[r]), int(c)) for r, c in zip(coo.row, coo.col)])
    return bool(np.all(d[coo.data > 0] < 3 * part.A * part.radii[coo.row[coo.data > 0]]))


def _lower_bound_margin(part: PartitionOfUnity) -> float:
    """min over balls of N1 * psi_i on B(x_i, 3 r_i); at least 1 when the bound holds."""
    worst = math.inf
    for k, (ids, _) in enumerate(part.space.balls(part.centers, 3.0 * part.radii)):
        row = part.psi.getrow(k).toarray().ravel()
        worst = min(worst, float(row[ids].min()) * part.N1)
    return worst


def _tent_rows(space, centers, radii, A):
    rows, cols, vals = [], [], []
    for k, (ids, d) in enumerate(space.balls(centers, 3.0 * A * radii)):
        v = np.clip((3.0 * A * radii[k] - d) / ((3.0 * A - 3.0) * radii[k]), 0.0, 1.0)
        keep = v > 0
        rows.append(np.full(keep.sum(), k))
        cols.append(ids[keep])
        vals.append(v[keep])
    return rows, cols, vals


def _capacity_rows(space, form, centers, radii, A, tol):
    rows, cols, vals = [], [], []
    inner = space.balls(centers, 3.0 * radii)
    outer = space.balls(centers, 3.0 * A * radii)
    adj = form.adjacency()
    for k, ((ids1, _), (ids2, _)) in enumerate(zip(inner, outer)):
        ball = np.zeros(space.n, dtype=bool)
        ball[ids2] = True
        ring = (adj @ ball.astype(float) > 0) & ~ball
        keep = ball | ring
        E0 = np.nonzero(ring)[0]
        if E0.size == 0:
            v = np.zeros(space.n)
            v[keep] = 1.0
        else:
            sol = solve_capacity(form.restrict(keep), ids1, E0, tol=tol)
            v = np.where(ball, sol.potential, 0.0)
        nz = np.nonzero(v > 0)[0]
        rows.append(np.full(nz.size, k))
        cols.append(nz)
        vals.append(v[nz])
    return rows, cols, vals


def build_partition(cover, form: Optional[EnergyForm] = None, psi_scale: Optional[ScaleFn] = None,
                    method: str = "tent", A: float = 2.0, tol: float = 1e-9) -> PartitionOfUnity:
    """psi_i = phi_i / sum_j phi_j for cutoffs equal to 1 on B(x_i, 3 r_i) and
    vanishing off B(x_i, 3 A r_i).

    ``cover`` is any cover exposing ``space``, ``U``, ``centers`` and
    ``radii``. With ``method="capacity"`` the cutoffs are capacity potentials
    of the annuli; ``tent`` uses the linear distance profile.
    """
    if A <= 1:
        raise DomainError("A must exceed 1")
    sp, centers, radii = cover.space, np.asarray(cover.centers), np.asarray(cover.radii, float)
    U = as_mask(sp, cover.U)
    if method == "tent":
        rows, cols, vals = _tent_rows(sp, centers, radii, A)
    elif method == "capacity":
        if form is None:
            raise DomainError("the capacity method needs an energy form")
        rows, cols, vals = _capacity_rows(sp, form, centers, radii, A, tol)
    else:
        raise DomainError(f"unknown cutoff method {method!r}")
    cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt))
    phi = sparse.csr_matrix((cat(vals, float), (cat(rows, np.int64), cat(cols, np.int64))),
                            shape=(centers.size, sp.n))
    total = np.asarray(phi.sum(axis=0)).ravel()
    bad = np.nonzero(U & (total <= 0))[0]
    if bad.size:
        raise CoverError("vertex of U outside every cutoff support", {"vertex": int(bad[0])})
    inv = np.where(total > 0, 1.0 / np.where(total > 0, total, 1.0), 0.0)
    coo = phi.tocoo()
    psi = sparse.csr_matrix((coo.data * inv[coo.col], (coo.row, coo.col)), shape=phi.shape)
    support = (phi > 0).astype(np.int32)
    N1 = int(np.asarray(support.sum(axis=0)).ravel()[U].max()) if U.any() else 0
    part = PartitionOfUnity(sp, U, centers, radii, float(A), method, phi, psi, N1)
    if form is not None:
        part.energy_per_ball = row_energies(form, psi)
        if psi_scale is not None:
            mb = sp.ball_masses(centers, radii)
            part.low_energy_ratio = part.energy_per_ball * eval_scale(psi_scale, radii) / mb
    return part


def row_energies(form: EnergyForm, rows: sparse.csr_matrix) -> np.ndarray:
    """energy(form, row) for every row of a sparse matrix."""
    n = form.vertex_count
    e = np.arange(form.n_edges)
    diff = sparse.csr_matrix((np.r_[np.ones(e.size), -np.ones(e.size)],
                              (np.r_[form.i, form.j], np.r_[e, e])), shape=(n, form.n_edges))
    dv = (rows @ diff).tocsr()
    dv.data = np.abs(dv.data) ** form.p * form.w[dv.indices]
    return np.array([math.fsum(dv.data[dv.indptr[k]:dv.indptr[k + 1]]) for k in range(dv.shape[0])])


# -------------------------------------------------------------- convolution
def ball_averages(space: DiscreteSpace, centers, radii, u, U: np.ndarray) -> np.ndarray:
    """u_{B(x_i, r_i) cap U} for each ball, as exact weighted means."""
    u = np.asarray(u, dtype=float)
    out = np.empty(len(centers))
    for k, (ids, _) in enumerate(space.balls(centers, radii)):
        ids = ids[U[ids]]
        if ids.size == 0:
            raise CoverError("empty averaging ball", {"ball": k})
        w = space.weights[ids]
        out[k] = math.fsum(w * u[ids]) / math.fsum(w)
    return out


def discrete_convolution(partition: PartitionOfUnity, u, U=None) -> np.ndarray:
    """A_delta u = sum_i u_{B(x_i, 3 r_i) cap U} psi_i on every vertex."""
    U = partition.U if U is None else as_mask(partition.space, U)
    avg = ball_averages(partition.space, partition.centers, 3.0 * partition.radii, u, U)
    return np.asarray(partition.psi.T @ avg).ravel()


def lp_distance(space: DiscreteSpace, a, b, p: float, mask=None) -> float:
    diff = np.abs(np.asarray(a, float) - np.asarray(b, float)) ** p * space.weights
    if mask is not None:
        diff = diff[mask]
    return math.fsum(diff) ** (1.0 / p)


def convolution_errors(space: DiscreteSpace, u, deltas: Sequence[float], p: float = 2.0,
                       A: float = 2.0, U=None) -> list:
    """||A_delta u - u||_{L^p(U)} for each delta, using 2 delta-net covers of U = X
    (or Whitney-type good covers otherwise) and tent partitions."""
    from .covers import good_cover
    out = []
    for d in deltas:
        gc = good_cover(space, U, lam=1.0, A=A, delta=d)
        part = build_partition(gc, method="tent", A=A)
        out.append(lp_distance(space, discrete_convolution(part, u), u, p, part.U))
    return out


# --------------------------------------------------------------- reflection
@dataclass
class ReflectionMap:
    space: DiscreteSpace
    U: np.ndarray
    U_sharp: np.ndarray
    eps: float
    A: float
    cover_U: WhitneyCover
    cover_sharp: WhitneyCover
    small: np.ndarray
    target: np.ndarray
    multiplicity: np.ndarray
    corridor_ok: bool
    distance_ratio_max: float
    preball_ok: bool
    chain_len_max: int
    chain_pairs_below_resolution: int = 0

    @property
    def K(self) -> int:
        return int(self.multiplicity.max()) if self.multiplicity.size else 0

    def to_json(self) -> str:
        return json.dumps({"eps": self.eps, "A": self.A, "n_small": int(self.small.size),
                           "K": self.K, "corridor_ok": self.corridor_ok,
                           "distance_ratio_max": self.distance_ratio_max,
                           "preball_ok": self.preball_ok, "chain_len_max": self.chain_len_max,
                           "chain_pairs_below_resolution": self.chain_pairs_below_resolution},
                          sort_keys=True)


def exterior_interior(space: DiscreteSpace, U: np.ndarray) -> np.ndarray:
    """Lattice interior of the complement: vertices outside U with no neighbour in U."""
    return ~closure_mask(space, U)


def build_reflection(space: DiscreteSpace, U, eps: float, A: float = 1.0) -> ReflectionMap:
    """Map each small complement-Whitney ball to the domain-Whitney ball with
    the nearest center among those in the radius corridor."""
    if not 0 < eps < 1.0 / 14.0:
        raise DomainError("eps must lie in (0, 1/14)")
    U = as_mask(space, U)
    U_sharp = exterior_interior(space, U)
    if not U_sharp.any():
        raise DomainError("the exterior of U has empty interior")
    cu = whitney_cover(space, U, eps)
    cs = whitney_cover(space, U_sharp, eps)
    diam_U = _set_diam(space, np.nonzero(U)[0])
    small = np.nonzero(cs.radii < eps / (6 * A * (1 + eps)) * diam_U)[0]
    lo = (1 + eps) / (1 + 4 * eps)
    hi = (1 + eps) / (1 - 2 * eps)
    target = np.empty(small.size, dtype=np.int64)
    dratio = 0.0
    dist_cap = (2 + 1.5 * A) * (1 + eps) / eps
    for k, b in enumerate(small):
        s = cs.radii[b]
        ok = np.nonzero((cu.radii > lo * s) & (cu.radii < hi * s))[0]
        if ok.size == 0:
            raise CertificateError("no domain ball in the radius corridor",
                                   {"ball": int(b), "center": int(cs.centers[b]), "radius": float(s)})
        d = space.dist_from(int(cs.centers[b]), cu.centers[ok])
        best = int(np.argmin(d))
        target[k] = ok[best]
        dratio = max(dratio, float(d[best]) / (dist_cap * s))
    mult = np.bincount(target, minlength=len(cu))
    r = cu.radii[target]
    s = cs.radii[small]
    corridor = bool(np.all((r > lo * s) & (r < hi * s)))
    pre_ok, chain_max, unresolved = _reflection_chains(space, cu, cs, small, target)
    return ReflectionMap(space, U, U_sharp, float(eps), float(A), cu, cs, small, target, mult,
                         corridor, dratio, pre_ok, chain_max, unresolved)


def _reflection_chains(space, cu, cs, small, target):
    """Radius ratio bound and chain length for mapped pairs whose 6-dilates meet.

    Pairs whose target balls have 3-dilates below the lattice spacing cannot
    be chained on vertices and are counted separately.
    """
    if small.size < 2:
        return True, 0, 0
    eps = cu.eps
    six = sparse.csr_matrix(cs.incidence(6.0)[small])
    i, j = _meeting_pairs(six)
    bound = (1 + 4 * eps) * (1 + 7 * eps) / ((1 - 2 * eps) * (1 - 5 * eps))
    r1, r2 = cu.radii[target[i]], cu.radii[target[j]]
    pre_ok = bool(np.all((r1 <= bound * r2) & (r2 <= bound * r1)))
    resolved = np.minimum(r1, r2) * 3.0 > space.spacing
    three = cu.incidence(3.0)
    a, b = _meeting_pairs(three)
    adj = sparse.coo_matrix((np.ones(a.size), (a, b)), shape=(len(cu), len(cu))).tocsr()
    adj = adj + adj.T
    need = np.unique(target)
    hops = csgraph.shortest_path(adj, unweighted=True, directed=False, indices=need)
    pos = {int(t): k for k, t in enumerate(need)}
    longest = 0
    for x, y in zip(target[i][resolved], target[j][resolved]):
        h = hops[pos[int(x)], y]
        if not np.isfinite(h):
            return pre_ok, -1, int((~resolved).sum())
        longest = max(longest, int(h) + 1)
    return pre_ok, longest, int((~resolved).sum())


def reflection_partition(refl: ReflectionMap, form: Optional[EnergyForm] = None,
                         psi_scale: Optional[ScaleFn] = None, method: str = "tent") -> PartitionOfUnity:
    """Partition of unity on the complement cover with supports in the 6-dilates."""
    return build_partition(refl.cover_sharp, form, psi_scale, method=method, A=2.0)


def extend(space: DiscreteSpace, U, u, refl: ReflectionMap,
           partition_sharp: PartitionOfUnity) -> np.ndarray:
    """Ext_Q(u): u on U, reflected ball averages on the exterior and the mean
    of the U-neighbours on boundary-layer vertices."""
    U = as_mask(space, U)
    u = np.asarray(u, dtype=float)
    if partition_sharp.psi.shape[0] != len(refl.cover_sharp):
        raise DomainError("partition does not match the complement cover")
    cu = refl.cover_U
    avg = ball_averages(space, cu.centers[refl.target], 3.0 * cu.radii[refl.target], u, U)
    outside = np.asarray(partition_sharp.psi[refl.small].T @ avg).ravel()
    out = outside.copy()
    layer = ~U & ~refl.U_sharp
    if layer.any():
        adj = space.graph()
        ids = np.nonzero(layer)[0]
        for v in ids:
            nb = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
            nb = nb[U[nb]]
            if nb.size:
                out[v] = math.fsum(u[nb]) / nb.size
    out[U] = u[U]
    return out


def restricted_measure(form: EnergyForm, u, U: np.ndarray) -> np.ndarray:
    """Per-vertex Gamma_{p,U}<u> from the subgraph induced on U."""
    return energy_measure(form.restrict(U), np.where(U, u, 0.0)).per_vertex


def _inf_alpha(vals: np.ndarray, w: np.ndarray, p: float) -> float:
    if vals.size == 0:
        return 0.0
    if p == 2.0:
        a = math.fsum(w * vals) / math.fsum(w)
        return math.fsum(w * (vals - a) ** 2)
    res = minimize_scalar(lambda a: float(np.sum(w * np.abs(vals - a) ** p)),
                          bounds=(float(vals.min()), float(vals.max())), method="bounded",
                          options={"xatol": 1e-12 * (1 + float(np.abs(vals).max()))})
    return float(res.fun)


def verify_extension(space: DiscreteSpace, U, u, form: EnergyForm, psi: ScaleFn, ext,
                     radii: Optional[Sequence[float]] = None, A1: float = 2.0, K: float = 4.0,
                     collar: Optional[Sequence[float]] = None, max_xi: int = 64,
                     seed: int = 0) -> dict:
    """Measured constants of the extension bounds.

    ``C1``: Lp bound near the boundary with dilation ``A1``; ``C_ext_pi``:
    oscillation of Ext over boundary balls against Psi(r) times the interior
    energy in the K-dilate; ``C_energy``: total energy of Ext against the
    interior energy plus the scaled L^p mass; ``collar``: energy-measure mass
    of Ext in the delta-neighbourhood of the boundary.
    """
    U = as_mask(space, U)
    u = np.asarray(u, dtype=float)
    ext = np.asarray(ext, dtype=float)
    p = form.p
    w = space.weights
    bd = np.nonzero(closure_mask(space, U) & ~U)[0]
    if bd.size > max_xi:
        bd = np.sort(np.random.default_rng(seed).choice(bd, max_xi, replace=False))
    diam_U = _set_diam(space, np.nonzero(U)[0])
    if radii is None:
        radii = [diam_U * 2.0 ** -k for k in range(2, 7)]
    gam_u = restricted_measure(form, u, U)
    c1 = c_pi = 0.0
    violations = 0
    for r in radii:
        small = space.balls(bd, r)
        big = space.balls(bd, A1 * r)
        wide = space.balls(bd, K * r)
        for (ids, _), (idb, _), (idk, _) in zip(small, big, wide):
            num = math.fsum(w[ids] * np.abs(ext[ids]) ** p)
            idb = idb[U[idb]]
            den = math.fsum(w[idb] * np.abs(u[idb]) ** p)
            if den > 0:
                c1 = max(c1, num / den)
            elif num > 0:
                violations += 1
            osc = _inf_alpha(ext[ids], w[ids], p)
            idk = idk[U[idk]]
            g = math.fsum(gam_u[idk])
            if g > 0:
                c_pi = max(c_pi, osc / (eval_scale(psi, r) * g))
            elif osc > 1e-14:
                violations += 1
    total_u = math.fsum(gam_u[U]) + math.fsum(w[U] * np.abs(u[U]) ** p) / eval_scale(psi, diam_U)
    e_ext = energy(form, ext)
    c_energy = e_ext / total_u if total_u > 0 else (0.0 if e_ext == 0 else math.inf)
    if collar is None:
        collar = [diam_U * 2.0 ** -k for k in range(3, 7)]
    layer = np.nonzero(closure_mask(space, U) & ~U)[0]
    dist_bd = space.dist_to_set(np.isin(np.arange(space.n), layer))
    meas = energy_measure(form, ext).per_vertex
    collar_tab = [[float(d), math.fsum(meas[dist_bd < d])] for d in collar]
    return {"C1": c1, "A1": A1, "C_ext_pi": c_pi, "K": K, "C_energy": c_energy,
            "energy_ext": e_ext, "violations": violations, "collar": collar_tab,
            "restriction_exact": bool(np.array_equal(ext[U], u[U]))}


def pi_on_domain(space: DiscreteSpace, U, u, form: EnergyForm, psi: ScaleFn,
                 radii: Sequence[float], A_U: float = 2.0, n_centers: int = 64,
                 seed: int = 0) -> float:
    """Smallest C_U making the Poincare inequality on B_U balls hold on the samples."""
    U = as_mask(space, U)
    u = np.asarray(u, dtype=float)
    gam = restricted_measure(form, u, U)
    ids_U = np.nonzero(U)[0]
    rng = np.random.default_rng(seed)
    cen = rng.choice(ids_U, min(n_centers, ids_U.size), replace=False)
    w = space.weights
    worst = 0.0
    for r in radii:
        for (ids, _), (idb, _) in zip(space.balls(cen, r), space.balls(cen, A_U * r)):
            ids = ids[U[ids]]
            idb = idb[U[idb]]
            vals = u[ids]
            m = math.fsum(w[ids] * vals) / math.fsum(w[ids])
            lhs = math.fsum(w[ids] * np.abs(vals - m) ** form.p)
            g = math.fsum(gam[idb])
            if g > 0:
                worst = max(worst, lhs / (eval_scale(psi, r) * g))
    return worst
