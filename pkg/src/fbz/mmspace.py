"""Discrete metric measure spaces.

A :class:`DiscreteSpace` is a finite weighted point cloud together with a
metric. Fractal pre-approximations (interval, square, Vicsek set, Sierpinski
gasket and carpet) are generated on integer lattices so that Euclidean
distances between vertices are computed exactly from integer quadratic forms;
equal distances therefore compare equal, which matters for strict balls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from itertools import combinations

import numpy as np
from scipy import sparse, stats
from scipy.sparse import csgraph
from scipy.spatial import cKDTree, ConvexHull

from .errors import DiagnosticError, FormatError, SizingError

METRIC_MODES = ("euclidean", "geodesic-graph", "precomputed")
DEFAULT_MAX_POINTS = 2_000_000

_SQ = ((0, 0), (1, 0), (0, 1), (1, 1))
_SQ_SIDES = ((0, 1), (0, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class _Family:
    maps: tuple
    scale: int
    cell: tuple
    cell_edges: tuple
    gram: tuple
    gram_div: int
    embed: tuple


FAMILIES = {
    "interval": _Family(((0,), (1,)), 2, ((0,), (1,)), ((0, 1),), ((1,),), 1, ((1.0,),)),
    "square": _Family(_SQ, 2, _SQ, _SQ_SIDES, ((1, 0), (0, 1)), 1, ((1.0, 0.0), (0.0, 1.0))),
    "vicsek": _Family(((0, 0), (2, 0), (0, 2), (2, 2), (1, 1)), 3, _SQ,
                      tuple(combinations(range(4), 2)), ((1, 0), (0, 1)), 1,
                      ((1.0, 0.0), (0.0, 1.0))),
    "gasket": _Family(((0, 0), (1, 0), (0, 1)), 2, ((0, 0), (1, 0), (0, 1)),
                      ((0, 1), (0, 2), (1, 2)), ((2, 1), (1, 2)), 2,
                      ((1.0, 0.0), (0.5, math.sqrt(3.0) / 2.0))),
    "carpet": _Family(tuple((i, j) for j in range(3) for i in range(3) if (i, j) != (1, 1)), 3,
                      _SQ, _SQ_SIDES, ((1, 0), (0, 1)), 1, ((1.0, 0.0), (0.0, 1.0))),
}


def vertex_count(kind: str, level: int) -> int:
    """Closed-form vertex count of the level-``level`` pre-fractal."""
    n = level
    if kind == "interval":
        return 2 ** n + 1
    if kind == "square":
        return (2 ** n + 1) ** 2
    if kind == "vicsek":
        return 3 * 5 ** n + 1
    if kind == "gasket":
        return 3 * (3 ** n + 1) // 2
    if kind == "carpet":
        c = 4
        for k in range(1, n + 1):
            c = 8 * c - 8 * (3 ** (k - 1) + 1)
        return c
    raise ValueError(f"unknown fractal kind {kind!r}")


class DiscreteSpace:
    """Finite metric measure space (X, d, m).

    Instances are treated as immutable once built; all query methods are pure.

    Args:
        coords: (N, dim) array of ambient coordinates, dim <= 3.
        weights: positive point masses.
        metric_mode: ``euclidean``, ``geodesic-graph`` or ``precomputed``.
        edges: optional (E, 2) vertex pairs of the cell-adjacency graph.
        matrix: full distance matrix, required for ``precomputed``.
        lattice, gram, gram_div, unit: optional exact integer description of
            the coordinates; Euclidean distances are then
            ``unit * sqrt(delta @ gram @ delta / gram_div)``.
    """

    def __init__(self, coords, weights, metric_mode="euclidean", *, edges=None, matrix=None,
                 lattice=None, gram=None, gram_div=1, unit=1.0, kind=None, level=None,
                 cells=None, cell_mass=None):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        weights = np.asarray(weights, dtype=float)
        if metric_mode not in METRIC_MODES:
            raise ValueError(f"metric_mode must be one of {METRIC_MODES}")
        if coords.shape[0] != weights.shape[0]:
            raise ValueError("coords and weights differ in length")
        if coords.shape[1] > 3:
            raise ValueError("ambient dimension must be at most 3")
        if np.any(~(weights > 0)):
            raise ValueError("all weights must be strictly positive")
        self.coords = coords
        self.weights = weights
        self.total_mass = math.fsum(weights)
        self.metric_mode = metric_mode
        self.edges = None if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        if metric_mode == "precomputed" and self.matrix is None:
            raise ValueError("precomputed metric needs a distance matrix")
        if metric_mode == "geodesic-graph" and self.edges is None:
            raise ValueError("geodesic metric needs an edge list")
        self.lattice = None if lattice is None else np.asarray(lattice, dtype=np.int64)
        self.gram = None if gram is None else np.asarray(gram, dtype=np.int64)
        self.gram_div = int(gram_div)
        self.unit = float(unit)
        self.kind = kind
        self.level = level
        self.cells = cells
        self.cell_mass = cell_mass
        for arr in (self.coords, self.weights):
            arr.setflags(write=False)
        self._tree = None
        self._graph = None
        self._diam = None
        self._spacing = None

    # ------------------------------------------------------------------ basics
    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.coords)
        return self._tree

    def graph(self) -> sparse.csr_matrix:
        """Symmetric sparse adjacency with edge lengths.

        Uses the cell-adjacency edges when present, otherwise connects points
        closer than twice the largest nearest-neighbour distance.
        """
        if self._graph is None:
            if self.edges is not None:
                i, j = self.edges[:, 0], self.edges[:, 1]
            else:
                if self.metric_mode == "precomputed":
                    dm = self.matrix.copy()
                    np.fill_diagonal(dm, np.inf)
                    nn = dm.min(axis=1)
                    i, j = np.nonzero(np.triu(dm <= 2.0 * nn.max(), 1))
                else:
                    nn = self.tree.query(self.coords, k=2)[0][:, 1]
                    pairs = self.tree.query_pairs(2.0 * nn.max() * (1 + 1e-12), output_type="ndarray")
                    i, j = pairs[:, 0], pairs[:, 1]
            w = self._euclid_pairs(i, j) if self.metric_mode != "precomputed" else self.matrix[i, j]
            g = sparse.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
            self._graph = g.tocsr()
        return self._graph

    # --------------------------------------------------------------- distances
    def _euclid_pairs(self, i, j) -> np.ndarray:
        i = np.asarray(i)
        j = np.asarray(j)
        if self.lattice is not None:
            delta = self.lattice[j] - self.lattice[i]
            q = np.einsum("...k,kl,...l->...", delta, self.gram, delta)
            return self.unit * np.sqrt((q // self.gram_div).astype(float))
        diff = self.coords[j] - self.coords[i]
        return np.sqrt(np.einsum("...k,...k->...", diff, diff))

    def dist_from(self, i: int, idx=None) -> np.ndarray:
        """Distances from point ``i`` to ``idx`` (all points if None)."""
        if idx is None:
            idx = np.arange(self.n)
        idx = np.asarray(idx)
        if self.metric_mode == "euclidean":
            return self._euclid_pairs(np.full(idx.shape, i), idx)
        if self.metric_mode == "precomputed":
            return self.matrix[i, idx]
        row = csgraph.dijkstra(self.graph(), directed=False, indices=int(i))
        return row[idx]

    def dist_block(self, rows, cols=None) -> np.ndarray:
        """Dense distance block between ``rows`` and ``cols``."""
        rows = np.asarray(rows)
        cols = np.arange(self.n) if cols is None else np.asarray(cols)
        if self.metric_mode == "euclidean":
            return self._euclid_pairs(rows[:, None], cols[None, :])
        if self.metric_mode == "precomputed":
            return self.matrix[np.ix_(rows, cols)]
        full = csgraph.dijkstra(self.graph(), directed=False, indices=rows)
        return full[:, cols]

    def dist(self, i: int, j: int) -> float:
        return float(self.dist_from(i, np.array([j]))[0])

    def balls(self, centers, r):
        """Strict balls around several centers.

        ``r`` is a scalar or one radius per center. Returns a list of
        ``(ids, dists)`` pairs with ids ascending.
        """
        centers = np.atleast_1d(np.asarray(centers))
        radii = np.broadcast_to(np.asarray(r, dtype=float), centers.shape)
        out = []
        if self.metric_mode == "euclidean" and np.all(np.isfinite(radii)):
            rq = radii * (1.0 + 1e-9) + 1e-300
            lists = self.tree.query_ball_point(self.coords[centers], rq, return_sorted=True)
            for c, rc, ids in zip(centers, radii, lists):
                ids = np.asarray(ids, dtype=np.int64)
                d = self._euclid_pairs(np.full(ids.shape, c), ids)
                keep = d < rc
                out.append((ids[keep], d[keep]))
            return out
        if self.metric_mode == "geodesic-graph" and np.all(np.isfinite(radii)) and radii.size:
            rows = np.atleast_2d(csgraph.dijkstra(self.graph(), directed=False, indices=centers,
                                                  limit=float(radii.max())))
            for row, rc in zip(rows, radii):
                ids = np.nonzero(row < rc)[0]
                out.append((ids, row[ids]))
            return out
        for c, rc in zip(centers, radii):
            row = self.dist_from(int(c))
            ids = np.nonzero(row < rc)[0]
            out.append((ids, row[ids]))
        return out

    def ball(self, center: int, r: float) -> np.ndarray:
        """Ids of ``{y : d(center, y) < r}``."""
        return self.balls([center], r)[0][0]

    def ball_mass(self, center: int, r: float) -> float:
        return math.fsum(self.weights[self.ball(center, r)])

    def ball_masses(self, centers, r, chunk: int = 64) -> np.ndarray:
        """m(B(c, r_c)) for many centers, without holding all balls at once."""
        centers = np.atleast_1d(np.asarray(centers))
        radii = np.broadcast_to(np.asarray(r, dtype=float), centers.shape)
        out = np.empty(centers.size)
        for a in range(0, centers.size, chunk):
            for k, (ids, _) in enumerate(self.balls(centers[a:a + chunk], radii[a:a + chunk])):
                out[a + k] = math.fsum(self.weights[ids])
        return out

    def dist_to_set(self, mask) -> np.ndarray:
        """``d(z, S)`` for every vertex z, where S is given by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        target = np.nonzero(mask)[0]
        if target.size == 0:
            return np.full(self.n, np.inf)
        if self.metric_mode == "euclidean":
            tree = cKDTree(self.coords[target])
            approx = tree.query(self.coords, k=1)[0]
            # the float tree may misorder near-ties; an exact rescan of a
            # slightly wider ball makes the minimum exact
            res = np.empty(self.n)
            lists = tree.query_ball_point(self.coords, approx * (1 + 1e-9) + 1e-300)
            for z, ids in enumerate(lists):
                res[z] = self._euclid_pairs(np.full(len(ids), z), target[ids]).min()
            res[mask] = 0.0
            return res
        if self.metric_mode == "precomputed":
            return self.matrix[:, target].min(axis=1)
        return csgraph.dijkstra(self.graph(), directed=False, indices=target, min_only=True)

    @property
    def diam(self) -> float:
        if self._diam is None:
            self._diam = self._compute_diam()
        return self._diam

    def _compute_diam(self) -> float:
        if self.n < 2:
            return 0.0
        if self.metric_mode == "precomputed":
            return float(self.matrix.max())
        if self.metric_mode == "euclidean":
            if self.dim == 1:
                cand = np.array([np.argmin(self.coords[:, 0]), np.argmax(self.coords[:, 0])])
            else:
                try:
                    cand = ConvexHull(self.coords).vertices
                except Exception:
                    cand = np.arange(self.n)
            return float(self.dist_block(cand, cand).max())
        # geodesic: eccentricities of convex-hull vertices and a double sweep
        try:
            cand = ConvexHull(self.coords).vertices if self.dim > 1 else \
                np.array([np.argmin(self.coords[:, 0]), np.argmax(self.coords[:, 0])])
        except Exception:
            cand = np.array([0])
        d = csgraph.dijkstra(self.graph(), directed=False, indices=cand)
        far = int(np.argmax(d.max(axis=0)))
        d2 = csgraph.dijkstra(self.graph(), directed=False, indices=far)
        return float(max(d.max(), d2.max()))

    @property
    def spacing(self) -> float:
        """Lattice spacing: smallest nonzero distance to a nearest neighbour."""
        if self._spacing is None:
            if self.metric_mode == "precomputed":
                dm = self.matrix + np.diag(np.full(self.n, np.inf))
                self._spacing = float(dm.min())
            else:
                dd, kk = self.tree.query(self.coords, k=2)
                self._spacing = float(self._euclid_pairs(np.arange(self.n), kk[:, 1]).min())
        return self._spacing

    def nearest(self, point) -> int:
        """Id of the vertex closest to an ambient point (Euclidean)."""
        return int(self.tree.query(np.atleast_1d(np.asarray(point, dtype=float)))[1])

    def with_metric(self, metric_mode: str) -> "DiscreteSpace":
        """Same points and weights under another metric mode."""
        return DiscreteSpace(self.coords, self.weights, metric_mode, edges=self.edges,
                             matrix=self.matrix, lattice=self.lattice, gram=self.gram,
                             gram_div=self.gram_div, unit=self.unit, kind=self.kind,
                             level=self.level, cells=self.cells, cell_mass=self.cell_mass)

    @classmethod
    def from_matrix(cls, matrix, weights, coords=None) -> "DiscreteSpace":
        matrix = np.asarray(matrix, dtype=float)
        if coords is None:
            coords = np.arange(matrix.shape[0], dtype=float)
        return cls(coords, weights, "precomputed", matrix=matrix)


# ---------------------------------------------------------------------- build
def build_fractal(kind: str, level: int, metric: str = "euclidean",
                  max_points: int = DEFAULT_MAX_POINTS) -> DiscreteSpace:
    """Level-``level`` pre-fractal with the normalized self-similar measure.

    Every level-n cell carries mass M^-n, split equally over its vertices.
    """
    if kind not in FAMILIES:
        raise ValueError(f"unknown fractal kind {kind!r}; choose from {sorted(FAMILIES)}")
    if level < 0:
        raise ValueError("level must be nonnegative")
    expected = vertex_count(kind, level)
    if expected > max_points:
        raise SizingError(f"{kind} level {level} has {expected} points, above the cap of {max_points}")
    fam = FAMILIES[kind]
    maps = np.array(fam.maps, dtype=np.int64)
    cell = np.array(fam.cell, dtype=np.int64)
    origins = np.zeros((1, maps.shape[1]), dtype=np.int64)
    for _ in range(level):
        origins = (fam.scale * origins[:, None, :] + maps[None, :, :]).reshape(-1, maps.shape[1])
    corners = origins[:, None, :] + cell[None, :, :]
    verts, inverse = np.unique(corners.reshape(-1, maps.shape[1]), axis=0, return_inverse=True)
    inverse = inverse.reshape(corners.shape[:2])
    n_maps = maps.shape[0]
    cell_mass = float(n_maps) ** (-level)
    weights = np.bincount(inverse.ravel(), minlength=len(verts)) * (cell_mass / cell.shape[0])
    unit = float(fam.scale) ** (-level)
    coords = (verts.astype(float) * unit) @ np.array(fam.embed)
    ce = np.array(fam.cell_edges, dtype=np.int64)
    e = np.stack([inverse[:, ce[:, 0]], inverse[:, ce[:, 1]]], axis=-1).reshape(-1, 2)
    e = np.unique(np.sort(e, axis=1), axis=0)
    space = DiscreteSpace(coords, weights, "euclidean", edges=e, lattice=verts,
                          gram=np.array(fam.gram), gram_div=fam.gram_div, unit=unit,
                          kind=kind, level=level, cells=inverse, cell_mass=cell_mass)
    return space.with_metric(metric) if metric != "euclidean" else space


# ----------------------------------------------------------------------- nets
def net(space: DiscreteSpace, delta: float) -> np.ndarray:
    """Greedy maximal delta-separated subset in ascending id order."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    blocked = np.zeros(space.n, dtype=bool)
    chosen = []
    for i in range(space.n):
        if blocked[i]:
            continue
        chosen.append(i)
        blocked[space.ball(i, delta)] = True
    return np.array(chosen, dtype=np.int64)


def ball(space: DiscreteSpace, center: int, r: float) -> np.ndarray:
    return space.ball(center, r)


# ---------------------------------------------------------------- diagnostics
@dataclass(frozen=True)
class SpaceDiagnostics:
    doubling_const: float
    ahlfors: tuple  # (Q, C_AR, residual)
    reverse_doubling: tuple  # (Q_rvd, c_1)
    chain_const: float
    uniform_perfect_sigma: float
    samples_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def _chain_constant(space: DiscreteSpace, rng, n_pairs: int) -> float:
    g = space.graph()
    h = space.spacing
    worst = 1.0
    for _ in range(n_pairs):
        x, y = rng.choice(space.n, size=2, replace=False)
        dist, pred = csgraph.dijkstra(g, directed=False, indices=int(x), return_predecessors=True)
        if not np.isfinite(dist[y]):
            return math.inf
        path = [int(y)]
        while path[-1] != x:
            path.append(int(pred[path[-1]]))
        path = np.array(path[::-1])
        arc = dist[path]
        dxy = space.dist(int(x), int(y))
        n_max = max(1, int(dxy // h))
        n = 1
        while n <= n_max:
            targets = np.linspace(0.0, arc[-1], n + 1)
            pos = np.clip(np.searchsorted(arc, targets), 0, len(arc) - 1)
            pos[0], pos[-1] = 0, len(arc) - 1
            pts = path[pos]
            gaps = space._euclid_pairs(pts[:-1], pts[1:]) if space.metric_mode == "euclidean" \
                else np.array([space.dist(int(a), int(b)) for a, b in zip(pts[:-1], pts[1:])])
            worst = max(worst, float(gaps.max()) * n / dxy)
            n *= 2
    return worst


def diagnostics(space: DiscreteSpace, n_samples: int = 256, seed: int = 0) -> SpaceDiagnostics:
    """Sampled doubling, Ahlfors, reverse-doubling, chain and perfectness estimates."""
    if space.n < 2:
        raise DiagnosticError("diagnostics need at least two points")
    if n_samples < 32:
        raise DiagnosticError("n_samples must be at least 32")
    rng = np.random.default_rng(seed)
    diam = space.diam
    h = space.spacing
    r_lo, r_hi = 2.0 * h, diam / 2.0
    if not r_hi > r_lo:
        r_lo, r_hi = h, diam
    centers = rng.integers(0, space.n, size=n_samples)
    radii = np.exp(rng.uniform(math.log(r_lo), math.log(r_hi), size=n_samples))
    m1 = space.ball_masses(centers, radii)
    m2 = space.ball_masses(centers, 2.0 * radii)
    c_d = float(np.max(m2 / m1))

    lr, lm = np.log(radii), np.log(m1)
    fit = stats.linregress(lr, lm)
    q = float(fit.slope)
    c_ar = float(math.exp(np.max(np.abs(lm - q * lr))))
    residual = float(np.max(np.abs(lm - q * lr - fit.intercept)))

    # reverse doubling with the fitted exponent: pairs r = R / 2^k
    small = radii / 2.0 ** rng.integers(1, 4, size=n_samples)
    keep = small > h
    ms = space.ball_masses(centers[keep], small[keep])
    ratio = ms / m1[keep] / (small[keep] / radii[keep]) ** q
    c_1 = float(ratio.max()) if ratio.size else 1.0

    chain = _chain_constant(space, rng, max(4, n_samples // 8))

    # uniform perfectness: farthest point inside B(x, r) relative to r
    sig = []
    for c, r in zip(centers, radii):
        ids, d = space.balls([int(c)], float(r))[0]
        if ids.size < space.n:
            sig.append(d.max() / r)
    sigma = float(min(sig)) if sig else 0.5
    return SpaceDiagnostics(c_d, (q, c_ar, residual), (q, c_1), float(chain), sigma, int(n_samples))


# -------------------------------------------------------------- serialization
def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_space(space: DiscreteSpace, path) -> None:
    """Write the columnar text format; edges and matrices follow as tagged lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"fbz-space v1 N={space.n} dim={space.dim} metric={space.metric_mode}\n")
        for i in range(space.n):
            cols = " ".join(_fmt(c) for c in space.coords[i])
            fh.write(f"{i} {cols} {_fmt(space.weights[i])}\n")
        if space.edges is not None:
            for a, b in space.edges:
                fh.write(f"e {a} {b}\n")
        if space.matrix is not None:
            for row in space.matrix:
                fh.write("m " + " ".join(_fmt(v) for v in row) + "\n")


def load_space(path) -> DiscreteSpace:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[:2] != ["fbz-space", "v1"]:
            raise FormatError(f"bad header in {path}")
        try:
            fields = dict(tok.split("=", 1) for tok in header[2:])
            n, dim, mode = int(fields["N"]), int(fields["dim"]), fields["metric"]
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad header in {path}: {exc}") from exc
        coords = np.empty((n, dim))
        weights = np.empty(n)
        edges, rows = [], []
        for k in range(n):
            parts = fh.readline().split()
            if len(parts) != dim + 2 or int(parts[0]) != k:
                raise FormatError(f"bad point line {k} in {path}")
            coords[k] = [float(v) for v in parts[1:1 + dim]]
            weights[k] = float(parts[-1])
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
            elif parts[0] == "m":
                rows.append([float(v) for v in parts[1:]])
            else:
                raise FormatError(f"unexpected line in {path}: {line.strip()}")
    return DiscreteSpace(coords, weights, mode, edges=np.array(edges) if edges else None,
                         matrix=np.array(rows) if rows else None)
