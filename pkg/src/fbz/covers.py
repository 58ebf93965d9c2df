"""Good covers, eps-Whitney covers, uniform-domain checks and chains of balls.

Open sets are vertex masks. ``B_U(x, r)`` is the strict ball intersected
with U, and ``delta_U(z) = d(z, X \\ U)`` is computed exactly.
"""
from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import CertificateError, CoverError, DomainError
from .mmspace import DiscreteSpace, net


def as_mask(space: DiscreteSpace, U) -> np.ndarray:
    """Boolean vertex mask from a mask, an id list or None (whole space)."""
    if U is None:
        return np.ones(space.n, dtype=bool)
    arr = np.asarray(U)
    if arr.dtype == bool:
        if arr.shape != (space.n,):
            raise DomainError("mask length does not match the space")
        return arr.copy()
    mask = np.zeros(space.n, dtype=bool)
    mask[arr.astype(np.int64)] = True
    return mask


def box_mask(space: DiscreteSpace, lo, hi) -> np.ndarray:
    """Vertices strictly inside the axis box (lo, hi)."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (space.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (space.dim,))
    return np.all((space.coords > lo) & (space.coords < hi), axis=1)


def delta_U(space: DiscreteSpace, U_mask: np.ndarray) -> np.ndarray:
    """Distance from every vertex to the complement of U."""
    return space.dist_to_set(~U_mask)


def _membership(space: DiscreteSpace, centers, radii, U_mask: Optional[np.ndarray]):
    """Sparse incidence (balls x vertices) of B_U(x_i, r_i)."""
    lists = space.balls(centers, radii)
    rows, cols = [], []
    for k, (ids, _) in enumerate(lists):
        if U_mask is not None:
            ids = ids[U_mask[ids]]
        rows.append(np.full(ids.size, k, dtype=np.int64))
        cols.append(ids)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    data = np.ones(rows.size, dtype=np.int32)
    return sparse.csr_matrix((data, (rows, cols)), shape=(len(lists), space.n))


def _meeting_pairs(inc_a: sparse.csr_matrix, inc_b: Optional[sparse.csr_matrix] = None):
    """Index pairs (i, j), i < j, whose vertex sets intersect."""
    inc_b = inc_a if inc_b is None else inc_b
    co = (inc_a @ inc_b.T).tocoo()
    keep = co.row < co.col
    return co.row[keep], co.col[keep]


# ------------------------------------------------------------------ Whitney
@dataclass
class WhitneyCertificate:
    disjoint: bool
    radius_rule_max_err: float
    coverage_ok: bool
    overlap_max: int
    uncovered: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.disjoint and self.coverage_ok and self.radius_rule_max_err <= 1e-12


@dataclass
class WhitneyCover:
    space: DiscreteSpace
    U: np.ndarray
    eps: float
    centers: np.ndarray
    radii: np.ndarray
    delta: np.ndarray
    cert: WhitneyCertificate

    @property
    def K_eps(self) -> float:
        return 2.0 * (1.0 + self.eps)

    def __len__(self) -> int:
        return self.centers.size

    def incidence(self, factor: float = 1.0) -> sparse.csr_matrix:
        """Incidence matrix of the dilates B_U(x_i, factor * r_i)."""
        return _membership(self.space, self.centers, factor * self.radii, self.U)

    def to_json(self) -> str:
        rows = [{"center": int(c), "radius": float(r), "delta_U": float(d)}
                for c, r, d in zip(self.centers, self.radii, self.delta)]
        return json.dumps(rows, sort_keys=True)

    def cert_json(self) -> str:
        c = self.cert
        return json.dumps({"eps": self.eps, "K_eps": self.K_eps, "n_balls": len(self),
                           "disjoint": c.disjoint, "radius_rule_max_err": c.radius_rule_max_err,
                           "coverage_ok": c.coverage_ok, "overlap_max": c.overlap_max,
                           "uncovered": [int(v) for v in c.uncovered[:20]]}, sort_keys=True)


def whitney_cover(space: DiscreteSpace, U, eps: float) -> WhitneyCover:
    """Greedy maximal eps-Whitney cover of U.

    Candidates are visited by descending delta_U, then ascending id, and a
    candidate is kept when its ball meets no kept ball. A rejected candidate
    lies within r_i + r_j <= 2 r_j < K_eps r_j of an earlier center, so the
    K_eps-dilates cover every vertex of U.
    """
    if not 0 < eps < 0.5:
        raise DomainError("eps must lie in (0, 1/2)")
    U = as_mask(space, U)
    if not U.any() or U.all():
        raise DomainError("U must be nonempty and not the whole space")
    dU = delta_U(space, U)
    cand = np.nonzero(U)[0]
    order = cand[np.lexsort((cand, -dU[cand]))]
    rad = eps / (1.0 + eps) * dU
    owner = np.full(space.n, -1, dtype=np.int64)
    lists = space.balls(order, rad[order])
    kept = []
    for x, (ids, _) in zip(order, lists):
        ids = ids[U[ids]]
        if np.any(owner[ids] >= 0):
            continue
        owner[ids] = len(kept)
        kept.append(int(x))
    centers = np.array(kept, dtype=np.int64)
    cover = WhitneyCover(space, U, float(eps), centers, rad[centers], dU[centers],
                         WhitneyCertificate(True, 0.0, True, 0))
    cover.cert = _whitney_certificate(cover)
    return cover


def _whitney_certificate(cover: WhitneyCover) -> WhitneyCertificate:
    inc = cover.incidence(1.0)
    disjoint = bool(inc.sum(axis=0).max() <= 1) if inc.nnz else True
    expect = cover.eps / (1.0 + cover.eps) * cover.delta
    err = float(np.max(np.abs(cover.radii - expect) / expect)) if len(cover) else 0.0
    cov = np.asarray(cover.incidence(cover.K_eps).sum(axis=0)).ravel()
    uncovered = np.nonzero(cover.U & (cov == 0))[0]
    over = np.asarray(cover.incidence(1.0 / cover.eps).sum(axis=0)).ravel()
    return WhitneyCertificate(disjoint, err, uncovered.size == 0, int(over.max()),
                              uncovered.tolist())


@dataclass
class WhitneyReport:
    ok: bool
    rad_comparison: dict
    overlap_max: int
    overlap_bound_ok: bool
    central_checked: int
    central_ok: bool
    nearball_ok: bool
    witnesses: list

    def to_json(self) -> str:
        return json.dumps({"ok": self.ok, "rad_comparison": self.rad_comparison,
                           "overlap_max": self.overlap_max,
                           "overlap_bound_ok": self.overlap_bound_ok,
                           "central_checked": self.central_checked,
                           "central_ok": self.central_ok, "nearball_ok": self.nearball_ok,
                           "witnesses": self.witnesses[:20]}, sort_keys=True)


def verify_whitney(cover: WhitneyCover, lambda_check: Sequence[float] = (1.5, 2.0, 3.0),
                   A: Optional[float] = None, n_central: int = 64, seed: int = 0,
                   n_packing: int = 512, raise_on_failure: bool = False) -> WhitneyReport:
    """Check radius comparison, bounded overlap and the central-ball property.

    The overlap at dilate 1/eps is compared with the packing bound implied by
    disjointness: a vertex v with delta_U(v) = D only meets balls of radius
    greater than eps D / (2 + eps) whose centers lie within D / eps of v, so
    their number is at most m(B(v, D (1 + 1/eps))) divided by the smallest
    such ball mass. The bound is evaluated at the vertices of largest count
    and at a fixed random sample of at most ``n_packing`` vertices.

    The central-ball check needs the uniformity constant ``A`` and eps < 1/14;
    it is skipped otherwise.
    """
    sp, eps, r = cover.space, cover.eps, cover.radii
    witnesses = []
    rad = {}
    for lam in lambda_check:
        if not (lam > 1 and (lam - 1) * eps < 1):
            continue
        inc = cover.incidence(lam)
        i, j = _meeting_pairs(inc)
        hi = (1 + (lam + 1) * eps) / (1 - (lam - 1) * eps)
        worst = float(np.max(np.maximum(r[i] / r[j], r[j] / r[i]))) if i.size else 1.0
        bad = np.nonzero((r[i] > hi * r[j]) | (r[j] > hi * r[i]))[0]
        for b in bad[:5]:
            witnesses.append({"check": "rad_comparison", "lambda": lam,
                              "balls": [int(i[b]), int(j[b])]})
        rad[str(lam)] = {"bound": hi, "worst": worst, "pairs": int(i.size), "ok": bad.size == 0}

    inc = cover.incidence(1.0 / eps)
    count = np.asarray(inc.sum(axis=0)).ravel()
    ball_mass = np.asarray(cover.incidence(1.0) @ sp.weights).ravel()
    overlap_ok = True
    dU = delta_U(sp, cover.U)
    hit = np.nonzero(count > 0)[0]
    if hit.size > n_packing:
        # every vertex with the largest count plus a fixed random sample
        top = hit[count[hit] == count.max()][: n_packing // 2]
        rest = np.random.default_rng(seed).choice(hit, n_packing - top.size, replace=False)
        hit = np.unique(np.concatenate([top, rest]))
    if hit.size:
        csc = inc.tocsc()
        big = sp.ball_masses(hit, dU[hit] * (1.0 + 1.0 / eps))
        for v, mass in zip(hit, big):
            balls_v = csc.indices[csc.indptr[v]:csc.indptr[v + 1]]
            bound = mass / ball_mass[balls_v].min()
            if count[v] > bound * (1 + 1e-12):
                overlap_ok = False
                witnesses.append({"check": "overlap", "vertex": int(v), "count": int(count[v])})

    central_ok = nearball_ok = True
    checked = 0
    if A is not None and eps < 1.0 / 14.0 and len(cover):
        rng = np.random.default_rng(seed)
        closure = closure_mask(sp, cover.U)
        pts = np.nonzero(closure)[0]
        diam_U = _set_diam(sp, np.nonzero(cover.U)[0])
        three = cover.incidence(3.0)
        for _ in range(n_central):
            x = int(rng.choice(pts))
            lo = dU[x]
            hi_r = diam_U / 2
            if not lo < hi_r:
                continue
            rr = float(lo + (hi_r - lo) * rng.random()) if lo > 0 else float(hi_r * rng.random())
            if rr <= 0 or rr < lo:
                continue
            ball_ids = sp.ball(x, rr)
            ball_ids = ball_ids[cover.U[ball_ids]]
            if ball_ids.size == 0:
                continue
            checked += 1
            members = np.unique(three[:, ball_ids].nonzero()[0])
            lo_b = eps / (3 * A * (4 + eps)) * rr
            hi_b = 2 * eps / (1 - 2 * eps) * rr
            ok_r = np.any((r[members] >= lo_b) & (r[members] <= hi_b))
            if not ok_r:
                central_ok = False
                witnesses.append({"check": "central_ball", "x": x, "r": rr})
            covered = np.unique(three[members].nonzero()[1])
            outer = sp.ball(x, 2 * rr)
            if not np.all(np.isin(covered, outer)) or not np.all(np.isin(ball_ids, covered)):
                nearball_ok = False
                witnesses.append({"check": "near_ball", "x": x, "r": rr})
    ok = all(v["ok"] for v in rad.values()) and overlap_ok and central_ok and nearball_ok \
        and cover.cert.ok
    rep = WhitneyReport(ok, rad, int(count.max()) if count.size else 0, overlap_ok, checked,
                        central_ok, nearball_ok, witnesses)
    if raise_on_failure and not ok:
        raise CertificateError("Whitney certificate failed", witnesses)
    return rep


def closure_mask(space: DiscreteSpace, U: np.ndarray) -> np.ndarray:
    """U together with the vertices adjacent to U in the lattice graph."""
    g = space.graph()
    touched = (g @ U.astype(float)) > 0
    return U | touched


def _set_diam(space: DiscreteSpace, ids: np.ndarray) -> float:
    if ids.size < 2:
        return 0.0
    if space.metric_mode == "euclidean" and space.dim > 1 and ids.size > 3:
        from scipy.spatial import ConvexHull
        try:
            ids = ids[ConvexHull(space.coords[ids]).vertices]
        except Exception:
            pass
    elif space.metric_mode == "euclidean" and space.dim == 1:
        c = space.coords[ids, 0]
        ids = ids[[int(np.argmin(c)), int(np.argmax(c))]]
    return float(space.dist_block(ids, ids).max())


# --------------------------------------------------------------- good cover
@dataclass
class GoodCover:
    space: DiscreteSpace
    U: np.ndarray
    lam: float
    A: float
    centers: np.ndarray
    radii: np.ndarray
    kappa1: float
    N1: int
    checks: dict

    def __len__(self) -> int:
        return self.centers.size

    def incidence(self, factor: float = 1.0, restrict: bool = True) -> sparse.csr_matrix:
        return _membership(self.space, self.centers, factor * self.radii,
                           self.U if restrict else None)

    def to_json(self) -> str:
        return json.dumps({"lambda": self.lam, "A": self.A, "kappa1": self.kappa1, "N1": self.N1,
                           "checks": self.checks,
                           "balls": [{"center": int(c), "radius": float(r)}
                                     for c, r in zip(self.centers, self.radii)]}, sort_keys=True)


def good_cover(space: DiscreteSpace, U=None, lam: float = 1.0, A: float = 1.0,
               delta: Optional[float] = None) -> GoodCover:
    """(lambda, A)-good cover with measured kappa1 and N1.

    With U the whole space the balls are B(x_j, delta) over a 2 delta-net.
    Otherwise an eps-Whitney cover with (1 + eps)/eps >= lam and
    eps <= 1/(3A) is used.
    """
    U = as_mask(space, U)
    if U.all():
        if delta is None or delta <= 0:
            raise DomainError("a positive delta is required when U is the whole space")
        centers = net(space, 2.0 * delta)
        radii = np.full(centers.size, float(delta))
    else:
        eps = 0.49
        if lam > 1:
            eps = min(eps, 1.0 / (lam - 1.0))
        eps = min(eps, 1.0 / (3.0 * A)) * (1 - 1e-9)
        wc = whitney_cover(space, U, eps)
        centers, radii = wc.centers, wc.radii
    gc = GoodCover(space, U, float(lam), float(A), centers, radii, 1.0, 0, {})
    _good_cover_checks(gc)
    return gc


def _good_cover_checks(gc: GoodCover) -> None:
    U = gc.U
    one = gc.incidence(1.0, restrict=False)
    disjoint = bool(one.sum(axis=0).max() <= 1) if one.nnz else True
    lam_inc = gc.incidence(gc.lam, restrict=False)
    inside = bool(np.all(U[lam_inc.indices])) if lam_inc.nnz else True
    three = np.asarray(gc.incidence(3.0).sum(axis=0)).ravel()
    covers = bool(np.all(three[U] > 0))
    big = gc.incidence(3.0 * gc.A)
    i, j = _meeting_pairs(big)
    r = gc.radii
    gc.kappa1 = float(np.max(np.maximum(r[i], r[j]) / np.minimum(r[i], r[j]))) if i.size else 1.0
    gc.N1 = int(np.asarray(big.sum(axis=0)).max()) if big.nnz else 0
    gc.checks = {"disjoint": disjoint, "dilates_inside": inside, "three_cover": covers,
                 "kappa1": gc.kappa1, "N1": gc.N1}


# --------------------------------------------------------- uniform domains
@dataclass
class UniformDomainCert:
    A: float
    sampled_pairs: int
    worst_diam_ratio: float
    worst_cigar_ratio: float
    corkscrew_ok: bool
    verdict: str
    witness: Optional[tuple] = None

    @property
    def A_needed(self) -> float:
        return max(self.worst_diam_ratio, self.worst_cigar_ratio, 1.0)

    def to_json(self) -> str:
        return json.dumps({"A": self.A, "sampled_pairs": self.sampled_pairs,
                           "worst_diam_ratio": self.worst_diam_ratio,
                           "worst_cigar_ratio": self.worst_cigar_ratio,
                           "corkscrew_ok": self.corkscrew_ok, "verdict": self.verdict,
                           "witness": list(self.witness) if self.witness else None},
                          sort_keys=True)


def _widest_path(nbr_ptr, nbr_idx, weight, src, dst, allowed):
    """Path from src to dst maximizing the smallest node weight on it."""
    best = np.full(weight.size, -np.inf)
    prev = np.full(weight.size, -1, dtype=np.int64)
    best[src] = weight[src]
    heap = [(-best[src], src)]
    done = np.zeros(weight.size, dtype=bool)
    while heap:
        b, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        if v == dst:
            break
        for w in nbr_idx[nbr_ptr[v]:nbr_ptr[v + 1]]:
            if not allowed[w] or done[w]:
                continue
            cand = min(-b, weight[w])
            if cand > best[w]:
                best[w] = cand
                prev[w] = v
                heapq.heappush(heap, (-cand, w))
    return best[dst]


def _shortest_path(g: sparse.csr_matrix, src, dst, allowed):
    sub = np.nonzero(allowed)[0]
    pos = np.full(allowed.size, -1, dtype=np.int64)
    pos[sub] = np.arange(sub.size)
    gs = g[sub][:, sub]
    dist, pred = csgraph.dijkstra(gs, directed=False, indices=int(pos[src]),
                                  return_predecessors=True)
    t = int(pos[dst])
    if not np.isfinite(dist[t]):
        return None
    path = [t]
    while path[-1] != pos[src]:
        path.append(int(pred[path[-1]]))
    return sub[np.array(path[::-1])]


def uniform_curve(space: DiscreteSpace, U: np.ndarray, x: int, y: int, dU=None):
    """Best discrete uniform curve between x and y inside U.

    Returns ``(path, cigar_ratio, diam_ratio)`` where the path maximizes the
    bottleneck of delta_U(z) / min(d(x, z), d(y, z)) and, among such paths,
    is a shortest one.
    """
    if dU is None:
        dU = delta_U(space, U)
    g = space.graph()
    dx = space.dist_from(x)
    dy = space.dist_from(y)
    near = np.minimum(dx, dy)
    with np.errstate(divide="ignore"):
        weight = np.where(near > 0, dU / np.where(near > 0, near, 1.0), np.inf)
    weight[~U] = -np.inf
    bott = _widest_path(g.indptr, g.indices, weight, x, y, U)
    if not bott > 0:
        return None, math.inf, math.inf
    allowed = U & (weight >= bott)
    path = _shortest_path(g, x, y, allowed)
    cigar = 1.0 / bott if np.isfinite(bott) else 1.0
    dxy = space.dist(x, y)
    diam = _set_diam(space, path)
    return path, cigar, (diam / dxy if dxy > 0 else 1.0)


def check_uniform_domain(space: DiscreteSpace, U, A: float, n_pairs: int = 32,
                         seed: int = 0, n_corkscrew: int = 32) -> UniformDomainCert:
    """Sampled test of the A-uniform domain condition plus the corkscrew condition."""
    U = as_mask(space, U)
    ids = np.nonzero(U)[0]
    if ids.size < 2:
        raise DomainError("U needs at least two vertices")
    g = space.graph()
    nc, lab = csgraph.connected_components(g[ids][:, ids], directed=False)
    if nc != 1:
        raise DomainError("U is not connected in the lattice graph")
    dU = delta_U(space, U)
    rng = np.random.default_rng(seed)
    worst_d = worst_c = 1.0
    witness = None
    layer = np.nonzero(U & closure_mask(space, ~U))[0]
    for k in range(n_pairs):
        x, y = (int(v) for v in rng.choice(ids, 2, replace=False))
        if k % 2 and layer.size:
            # every other pair is local at the boundary: close pairs next to
            # obstacles are the hard ones
            x = int(rng.choice(layer))
            near = space.ball(x, float(space.diam * 2.0 ** rng.uniform(-6, -1)))
            near = near[U[near] & (near != x)]
            if near.size:
                y = int(rng.choice(near))
        _, cig, dia = uniform_curve(space, U, x, y, dU)
        if max(cig, dia) > A and (witness is None or max(cig, dia) > max(worst_c, worst_d)):
            witness = (x, y)
        worst_c = max(worst_c, cig)
        worst_d = max(worst_d, dia)
    cork = corkscrew_check(space, U, A, n_corkscrew, rng, dU)
    ok = worst_c <= A and worst_d <= A and cork
    return UniformDomainCert(float(A), n_pairs, float(worst_d), float(worst_c), cork,
                             "pass" if ok else "fail", None if ok else witness)


def corkscrew_check(space: DiscreteSpace, U: np.ndarray, A: float, n: int, rng, dU=None) -> bool:
    """For sampled x in the closure of U and r with U not inside B(x, r), look
    for y with B(y, r/(3A)) contained in B_U(x, r)."""
    if dU is None:
        dU = delta_U(space, U)
    pts = np.nonzero(closure_mask(space, U))[0]
    diam = space.diam
    for _ in range(n):
        x = int(rng.choice(pts))
        r = float(diam * 2.0 ** rng.uniform(-5, 0))
        ball = space.ball(x, r)
        if np.all(np.isin(np.nonzero(U)[0], ball)):
            continue
        s = r / (3 * A)
        cand = ball[U[ball] & (dU[ball] >= s)]
        if cand.size == 0:
            return False
        dx = space.dist_from(x, cand)
        # d(x, y) + s <= r with delta_U(y) >= s already puts B(y, s) inside B_U(x, r)
        if np.any(dx + s <= r):
            continue
        found = False
        for y in cand[np.argsort(dx, kind="stable")][:64]:
            inner = space.ball(int(y), s)
            if np.all(U[inner]) and np.all(np.isin(inner, ball)):
                found = True
                break
        if not found:
            return False
    return True


# ---------------------------------------------------------- chains of balls
@dataclass
class BallChain:
    balls: list
    max_radius_ratio: Optional[float]
    C0: Optional[float]
    C1: float
    rad_bound: Optional[float]
    rad_ok: Optional[bool]

    def __len__(self) -> int:
        return len(self.balls) - 1


def chain_of_balls(cover: WhitneyCover, B0: int, D: int, gamma: Sequence[int],
                   x: Optional[int] = None, r: Optional[float] = None,
                   A: Optional[float] = None) -> BallChain:
    """Shortest chain B0 = B_0, ..., B_l = D of cover balls whose 3-dilates
    meet consecutively and all meet the vertex path ``gamma``.

    When the reference ball (x, r) and the uniformity constant A are given,
    the chain radius bound is evaluated as well.
    """
    gamma = np.asarray(gamma, dtype=np.int64)
    three = cover.incidence(3.0)
    on_gamma = np.asarray(three[:, gamma].sum(axis=1)).ravel() > 0
    on_gamma[[B0, D]] = True
    if B0 == D:
        chain = [B0]
    else:
        i, j = _meeting_pairs(three)
        keep = on_gamma[i] & on_gamma[j]
        adj = sparse.coo_matrix((np.ones(keep.sum()), (i[keep], j[keep])),
                                shape=(len(cover), len(cover))).tocsr()
        adj = adj + adj.T
        prev = {B0: -1}
        q = deque([B0])
        while q and D not in prev:
            b = q.popleft()
            for c in adj.indices[adj.indptr[b]:adj.indptr[b + 1]]:
                if int(c) not in prev:
                    prev[int(c)] = b
                    q.append(int(c))
        if D not in prev:
            reach = [k for k in prev]
            hit = three[reach][:, gamma].nonzero()[1]
            gap = int(hit.max()) if hit.size else 0
            raise CoverError("no chain of balls along the path", {"gap_index": gap,
                                                                 "gap_vertex": int(gamma[gap])})
        chain = [D]
        while chain[-1] != B0:
            chain.append(prev[chain[-1]])
        chain = chain[::-1]
    sp = cover.space
    rad = cover.radii[chain]
    cen = cover.centers[chain]
    d_ids = cover.incidence(1.0)[D].indices
    C1 = 0.0
    for c, rc in zip(cen, rad):
        C1 = max(C1, float(sp.dist_from(int(c), d_ids).max()) / rc if d_ids.size else 0.0)
    ratio = C0 = bound = ok = None
    if r is not None:
        ratio = float(rad.max() / r)
        if x is not None:
            C0 = float(np.max((sp.dist_from(int(x), cen) + rad) / r))
        if A is not None:
            e = cover.eps
            bound = (A * (4 * e + 1) + 1 - 2 * e) * e / (1 - 2 * e) ** 2
            ok = bool(ratio <= bound)
    return BallChain([int(b) for b in chain], ratio, C0, C1, bound, ok)


# ------------------------------------------------------------- Bojarski
def bojarski_constant(space: DiscreteSpace, centers, radii, lam: float, q: float,
                      n_trials: int = 20, seed: int = 0) -> float:
    """Largest observed ratio of the lam-dilated to the undilated L^q sum
    over random nonnegative coefficients."""
    centers = np.asarray(centers)
    radii = np.asarray(radii, dtype=float)
    small = _membership(space, centers, radii, None).astype(float)
    big = _membership(space, centers, lam * radii, None).astype(float)
    rng = np.random.default_rng(seed)
    worst = 0.0
    w = space.weights
    for _ in range(n_trials):
        a = rng.exponential(size=centers.size) * (rng.random(centers.size) < 0.7)
        lhs = math.fsum(w * np.asarray(big.T @ a).ravel() ** q)
        rhs = math.fsum(w * np.asarray(small.T @ a).ravel() ** q)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return worst
