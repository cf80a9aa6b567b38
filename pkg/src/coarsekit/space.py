"""Finite pointed metric windows and their generators.

A window is a finite sample of a metric space together with a basepoint;
every distance query in the toolkit flows through :class:`MetricWindow`.
Windows are immutable after construction and safe to share between threads.

Five window kinds are supported through recipes:

* ``cayley``   -- balls in Cayley graphs of Z^d (word metric = l1) or free
  groups (reduced words, exact word metric),
* ``matrix``   -- an explicit distance matrix,
* ``graph``    -- shortest-path metric of a weighted graph,
* ``cloud``    -- a coordinate point cloud under l1 or l2,
* ``parabolic``-- the integer grid sample of {(x, y) : x >= 0, |y| <= sqrt(x)}
  under the Euclidean metric,
* ``product-with-line`` -- base window x integer segment under the l2
  product convention  d((x,s),(y,t))^2 = d(x,y)^2 + (s-t)^2.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

TOL = 1e-9

# Pairwise storage (matrix / graph kinds) is quadratic; refuse windows that
# would not fit rather than thrash.
MAX_PAIRWISE_POINTS = 4000
MAX_POINTS = 2_000_000

DEFAULT_RIM_MARGIN = 0.1


class WindowError(ValueError):
    """Raised when a recipe or an input file violates window invariants."""


def _canon_id(pid: Any) -> Any:
    """Canonicalize a point id loaded from JSON (lists become tuples)."""
    if isinstance(pid, list):
        return tuple(_canon_id(p) for p in pid)
    return pid


@dataclass(frozen=True)
class MetricWindow:
    """A finite pointed metric space sample with a radius bound.

    Distances are 64-bit floats; all comparisons in the toolkit use the
    absolute tolerance :data:`TOL`.  ``norm(x) = dist(x, basepoint)``.
    """

    ids: tuple
    metric: str                      # "l1" | "l2" | "product" | "matrix"
    basepoint: int                   # index into ids
    coords: np.ndarray | None = None
    matrix: np.ndarray | None = None
    base_dim: int = 0                # product kind: number of base coords
    base_metric: str = "l1"          # product kind: metric of the base factor
    rim_margin: float = DEFAULT_RIM_MARGIN
    recipe: dict | None = None
    _index: dict = field(default_factory=dict, repr=False)
    _norms: np.ndarray | None = field(default=None, repr=False)
    _tree: list = field(default_factory=list, repr=False)

    # -- construction ----------------------------------------------------

    def __post_init__(self):
        object.__setattr__(self, "_index", {pid: i for i, pid in enumerate(self.ids)})
        if len(self._index) != len(self.ids):
            raise WindowError("duplicate point ids")
        n = len(self.ids)
        if not (0 <= self.basepoint < n):
            raise WindowError("basepoint not among points")
        if self.metric == "matrix":
            norms = self.matrix[self.basepoint].astype(float)
        else:
            norms = self._dist_rows(self.basepoint, np.arange(n))
        object.__setattr__(self, "_norms", norms)

    @property
    def n_points(self) -> int:
        return len(self.ids)

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def radius(self) -> float:
        return float(self._norms.max()) if self.n_points else 0.0

    @property
    def rim(self) -> float:
        """Radius shaved by the rim margin; 'for all r' claims stop here."""
        return self.radius * (1.0 - self.rim_margin)

    @property
    def sentinel(self) -> float:
        """Distance reported to the empty set ('effectively infinite')."""
        return self.radius + 1.0

    def index(self, pid) -> int:
        try:
            return self._index[_canon_id(pid)]
        except KeyError:
            raise WindowError(f"unknown point id {pid!r}") from None

    def indices_of(self, pids) -> np.ndarray:
        return np.array([self.index(p) for p in pids], dtype=np.intp)

    # -- distances -------------------------------------------------------

    def _dist_rows(self, i: int, idx: np.ndarray) -> np.ndarray:
        """Distances from point ``i`` to each index in ``idx``."""
        if self.metric == "matrix":
            return self.matrix[i, idx].astype(float)
        a = self.coords[i]
        b = self.coords[idx]
        if self.metric == "l1":
            return np.abs(b - a).sum(axis=1).astype(float)
        if self.metric == "l2":
            return np.sqrt(((b - a) ** 2).sum(axis=1))
        if self.metric == "product":
            k = self.base_dim
            if self.base_metric == "l1":
                db = np.abs(b[:, :k] - a[:k]).sum(axis=1)
            else:
                db = np.sqrt(((b[:, :k] - a[:k]) ** 2).sum(axis=1))
            ds = np.abs(b[:, k] - a[k])
            return np.sqrt(db * db + ds * ds)
        raise WindowError(f"unknown metric {self.metric!r}")

    def dist(self, i: int, j: int) -> float:
        return float(self._dist_rows(i, np.array([j], dtype=np.intp))[0])

    def dist_many(self, i: int, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.intp)
        return self._dist_rows(i, idx)

    def norm(self, i: int) -> float:
        return float(self._norms[i])

    def dist_to_set(self, i: int, members: Iterable[int]) -> float:
        """min over a in A of dist(i, a); the empty set gets the sentinel."""
        idx = np.asarray(list(members) if not isinstance(members, np.ndarray) else members,
                         dtype=np.intp)
        if idx.size == 0:
            return self.sentinel
        return float(self.dist_many(i, idx).min())

    def set_distance(self, a: Iterable[int], b: Iterable[int]) -> float:
        """min over pairs (finite-set distance); empty side gets the sentinel."""
        ia = np.asarray(list(a), dtype=np.intp) if not isinstance(a, np.ndarray) else a
        ib = np.asarray(list(b), dtype=np.intp) if not isinstance(b, np.ndarray) else b
        if ia.size == 0 or ib.size == 0:
            return self.sentinel
        if ia.size > ib.size:
            ia, ib = ib, ia
        best = math.inf
        for i in ia:
            d = self.dist_many(int(i), ib).min()
            if d < best:
                best = float(d)
                if best <= TOL:
                    return best
        return best

    def dists_to_set(self, members: Iterable[int]) -> np.ndarray:
        """d(x, A) for every window point x, vectorized."""
        idx = np.asarray(list(members) if not isinstance(members, np.ndarray) else members,
                         dtype=np.intp)
        n = self.n_points
        if idx.size == 0:
            return np.full(n, self.sentinel)
        if self.coords is not None and self.coords.shape[1] == 1:
            # one-dimensional fast path: all supported metrics reduce to |dx|
            xs = self.coords[:, 0].astype(float)
            anchors = np.sort(xs[idx])
            pos = np.searchsorted(anchors, xs)
            left = np.where(pos > 0, np.abs(xs - anchors[np.maximum(pos - 1, 0)]), np.inf)
            right = np.where(pos < anchors.size,
                             np.abs(anchors[np.minimum(pos, anchors.size - 1)] - xs), np.inf)
            return np.minimum(left, right)
        out = np.full(n, np.inf)
        chunk = max(1, int(4_000_000 // max(idx.size, 1)))
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            block = self._pair_block(np.arange(lo, hi, dtype=np.intp), idx)
            out[lo:hi] = block.min(axis=1)
        return out

    def _pair_block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.metric == "matrix":
            return self.matrix[np.ix_(rows, cols)].astype(float)
        a = self.coords[rows][:, None, :]
        b = self.coords[cols][None, :, :]
        if self.metric == "l1":
            return np.abs(b - a).sum(axis=2).astype(float)
        if self.metric == "l2":
            return np.sqrt(((b - a) ** 2).sum(axis=2))
        k = self.base_dim
        if self.base_metric == "l1":
            db = np.abs(b[..., :k] - a[..., :k]).sum(axis=2)
        else:
            db = np.sqrt(((b[..., :k] - a[..., :k]) ** 2).sum(axis=2))
        ds = np.abs(b[..., k] - a[..., k])
        return np.sqrt(db * db + ds * ds)

    def diameter(self, members: Iterable[int]) -> float:
        """Exact max pairwise distance within a point set."""
        idx = np.asarray(list(members) if not isinstance(members, np.ndarray) else members,
                         dtype=np.intp)
        if idx.size <= 1:
            return 0.0
        if self.metric == "l1":
            # max pairwise l1 = max over sign patterns of a linear functional
            pts = self.coords[idx].astype(float)
            d = pts.shape[1]
            best = 0.0
            for mask in range(1 << (d - 1)):
                signs = np.array([1.0] + [1.0 if (mask >> j) & 1 else -1.0
                                          for j in range(d - 1)])
                proj = pts @ signs
                best = max(best, float(proj.max() - proj.min()))
            return best
        best = 0.0
        chunk = max(1, int(2_000_000 // max(idx.size, 1)))
        for lo in range(0, idx.size, chunk):
            block = self._pair_block(idx[lo:lo + chunk], idx)
            best = max(best, float(block.max()))
        return best

    # -- regions ----------------------------------------------------------

    def annulus(self, r1: float, r2: float) -> np.ndarray:
        """Indices of { x : r1 <= ||x|| <= r2 } (closed, with tolerance)."""
        if r1 < -TOL or r2 < r1 - TOL:
            raise WindowError(f"bad annulus bounds ({r1}, {r2})")
        return np.flatnonzero((self._norms >= r1 - TOL) & (self._norms <= r2 + TOL))

    def closed_ball(self, r: float) -> np.ndarray:
        return np.flatnonzero(self._norms <= r + TOL)

    def exact_ball(self, i: int, rho: float) -> np.ndarray:
        """Indices within exact metric distance <= rho of point i."""
        if self.metric == "matrix":
            return np.flatnonzero(self.matrix[i] <= rho + TOL)
        cand = self._box_candidates(i, rho)
        d = self.dist_many(i, cand)
        return cand[d <= rho + TOL]

    def _kdtree(self) -> cKDTree:
        if not self._tree:
            self._tree.append(cKDTree(self.coords))
        return self._tree[0]

    def _box_candidates(self, i: int, rho: float) -> np.ndarray:
        # every supported coordinate metric dominates l-infinity
        out = self._kdtree().query_ball_point(self.coords[i], rho + TOL, p=np.inf)
        return np.asarray(out, dtype=np.intp)

    def dist_to_complement(self, i: int, member_mask: np.ndarray,
                           cap: float | None = None) -> float:
        """d(i, X \\ V) for V given as a boolean mask; sentinel if V = X.

        With ``cap`` the search stops early once the distance provably
        exceeds it (the return value is then > cap but otherwise arbitrary).
        """
        if member_mask.all():
            return self.sentinel
        if self.metric == "matrix":
            return float(self.matrix[i][~member_mask].min())
        t = 1.0
        limit = 2.0 * self.radius + 1.0
        while True:
            cand = self._box_candidates(i, t)
            outside = cand[~member_mask[cand]]
            if outside.size:
                d = float(self.dist_many(i, outside).min())
                if d <= t + TOL:
                    return d
                t = d  # a witness exists at distance d; check boxes up to d
            else:
                if cap is not None and t > cap:
                    return t
                t *= 2.0
                if t > limit:
                    return self.sentinel

    def ball_within(self, i: int, member_mask: np.ndarray, r: float) -> bool:
        """True iff every window point within distance r of i lies in V."""
        ball = self.exact_ball(i, r)
        return bool(member_mask[ball].all())

    # -- validation --------------------------------------------------------

    def validate(self, full_limit: int = 500, samples: int = 20000, seed: int = 7):
        """Check symmetry/zero-diagonal/triangle inequality (1e-9 tolerance).

        Exhaustive on windows up to ``full_limit`` points, sampled above.
        """
        n = self.n_points
        if n == 0:
            raise WindowError("empty window")
        if self.metric == "matrix":
            m = self.matrix
            if m.shape != (n, n):
                raise WindowError("matrix shape mismatch")
            bad = np.argwhere(np.abs(m - m.T) > TOL)
            if bad.size:
                i, j = bad[0]
                raise WindowError(
                    f"asymmetric distance between {self.ids[i]!r} and {self.ids[j]!r}")
            if np.any(np.abs(np.diag(m)) > TOL):
                i = int(np.argmax(np.abs(np.diag(m))))
                raise WindowError(f"nonzero self-distance at {self.ids[i]!r}")
            if np.any(m < -TOL):
                i, j = np.argwhere(m < -TOL)[0]
                raise WindowError(
                    f"negative distance between {self.ids[i]!r} and {self.ids[j]!r}")
        if n <= full_limit:
            all_idx = np.arange(n, dtype=np.intp)
            if self.metric == "matrix":
                dmat = self.matrix.astype(float)
            else:
                dmat = self._pair_block(all_idx, all_idx)
            for k in range(n):
                slack = dmat - (dmat[:, k][:, None] + dmat[k][None, :])
                if slack.max() > TOL:
                    i, j = np.unravel_index(int(slack.argmax()), slack.shape)
                    raise WindowError(
                        "triangle inequality violated at "
                        f"({self.ids[i]!r}, {self.ids[j]!r}, {self.ids[k]!r})")
        else:
            rng = np.random.default_rng(seed)
            tri = rng.integers(0, n, size=(samples, 3))
            dij = np.array([self.dist(int(i), int(j)) for i, j, _ in tri])
            dik = np.array([self.dist(int(i), int(k)) for i, _, k in tri])
            dkj = np.array([self.dist(int(k), int(j)) for _, j, k in tri])
            bad = np.flatnonzero(dij > dik + dkj + TOL)
            if bad.size:
                i, j, k = tri[bad[0]]
                raise WindowError(
                    "triangle inequality violated at "
                    f"({self.ids[i]!r}, {self.ids[j]!r}, {self.ids[k]!r})")
        return self


# -- recipes ----------------------------------------------------------------


def _cayley_zd(d: int, radius: int) -> tuple[tuple, np.ndarray]:
    if d < 1 or radius < 0:
        raise WindowError("cayley Z^d needs d >= 1 and radius >= 0")
    pts = [()]
    for _ in range(d):
        pts = [p + (x,) for p in pts for x in range(-radius, radius + 1)]
    pts = [p for p in pts if sum(abs(c) for c in p) <= radius]
    est = len(pts)
    if est > MAX_POINTS:
        raise WindowError(f"window too large: {est} points")
    pts.sort()
    coords = np.array(pts, dtype=float)
    return tuple(pts), coords


def _free_group_ball(rank: int, radius: int) -> tuple:
    """Reduced words of length <= radius in the free group of given rank.

    Letters are +-1 .. +-rank; a word is a tuple of letters with no adjacent
    cancellation.  Word metric: d(u, v) = |u| + |v| - 2 |common prefix| is
    exact for free groups.
    """
    words = [()]
    frontier = [()]
    for _ in range(radius):
        nxt = []
        for w in frontier:
            for g in range(1, rank + 1):
                for s in (g, -g):
                    if w and w[-1] == -s:
                        continue
                    nxt.append(w + (s,))
        words.extend(nxt)
        frontier = nxt
        if len(words) > MAX_PAIRWISE_POINTS:
            raise WindowError(f"window too large: free group ball exceeds "
                              f"{MAX_PAIRWISE_POINTS} points")
    return tuple(words)


def _free_group_matrix(words: tuple) -> np.ndarray:
    n = len(words)
    lengths = np.array([len(w) for w in words])
    m = np.zeros((n, n))
    for i, u in enumerate(words):
        for j in range(i + 1, n):
            v = words[j]
            k = 0
            while k < len(u) and k < len(v) and u[k] == v[k]:
                k += 1
            m[i, j] = m[j, i] = lengths[i] + lengths[j] - 2 * k
    return m


def _parabolic_points(xmax: int) -> np.ndarray:
    pts = [(x, y) for x in range(xmax + 1)
           for y in range(-int(math.isqrt(x)), int(math.isqrt(x)) + 1)
           if y * y <= x]
    return np.array(sorted(pts), dtype=float)


def build(recipe: dict) -> MetricWindow:
    """Build a window from a recipe dict; deterministic given the seed."""
    kind = recipe.get("kind")
    params = recipe.get("params", {})
    seed = recipe.get("seed", 0)
    rim = float(recipe.get("rim_margin", DEFAULT_RIM_MARGIN))

    if kind == "cayley":
        group = params.get("group", "Z^d")
        if group == "Z^d":
            d = int(params.get("d", 1))
            radius = int(params["radius"])
            ids, coords = _cayley_zd(d, radius)
            bp = ids.index((0,) * d)
            w = MetricWindow(ids=ids, metric="l1", basepoint=bp, coords=coords,
                             rim_margin=rim, recipe=recipe)
        elif group == "free":
            rank = int(params.get("rank", 2))
            radius = int(params["radius"])
            ids = _free_group_ball(rank, radius)
            m = _free_group_matrix(ids)
            w = MetricWindow(ids=ids, metric="matrix", basepoint=0, matrix=m,
                             rim_margin=rim, recipe=recipe)
        else:
            raise WindowError(f"unsupported group {group!r}; supply Z^d or free")
    elif kind == "matrix":
        ids = tuple(_canon_id(p) for p in params["ids"])
        m = np.asarray(params["matrix"], dtype=float)
        bp = ids.index(_canon_id(params.get("basepoint", ids[0])))
        if len(ids) > MAX_PAIRWISE_POINTS:
            raise WindowError(f"window too large for pairwise storage: "
                              f"{len(ids)} > {MAX_PAIRWISE_POINTS} points")
        w = MetricWindow(ids=ids, metric="matrix", basepoint=bp, matrix=m,
                         rim_margin=rim, recipe=recipe)
    elif kind == "graph":
        w = _build_graph(params, rim, recipe)
    elif kind == "cloud":
        w = _build_cloud(params, seed, rim, recipe)
    elif kind == "parabolic":
        xmax = int(params["xmax"])
        coords = _parabolic_points(xmax)
        ids = tuple(map(tuple, coords.astype(int).tolist()))
        bp = ids.index((0, 0))
        w = MetricWindow(ids=ids, metric="l2", basepoint=bp, coords=coords,
                         rim_margin=rim, recipe=recipe)
    elif kind == "product-with-line":
        base = build(recipe["params"]["base"])
        half = int(params["half_length"])
        if base.coords is None:
            raise WindowError("product-with-line needs a coordinate base window")
        ids = tuple((pid, s) for pid in base.ids for s in range(-half, half + 1))
        reps = 2 * half + 1
        coords = np.hstack([
            np.repeat(base.coords, reps, axis=0),
            np.tile(np.arange(-half, half + 1, dtype=float), base.n_points)[:, None],
        ])
        bp = ids.index((base.ids[base.basepoint], 0))
        w = MetricWindow(ids=ids, metric="product", basepoint=bp, coords=coords,
                         base_dim=base.coords.shape[1], base_metric=base.metric,
                         rim_margin=rim, recipe=recipe)
    else:
        raise WindowError(f"unknown recipe kind {kind!r}")
    return w.validate()


def _build_graph(params: dict, rim: float, recipe: dict) -> MetricWindow:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    edges = params["edges"]
    ids = sorted({_canon_id(e[0]) for e in edges} | {_canon_id(e[1]) for e in edges})
    if len(ids) > MAX_PAIRWISE_POINTS:
        raise WindowError(f"window too large for pairwise storage: "
                          f"{len(ids)} > {MAX_PAIRWISE_POINTS} points")
    index = {p: i for i, p in enumerate(ids)}
    rows, cols, vals = [], [], []
    for e in edges:
        u, v = index[_canon_id(e[0])], index[_canon_id(e[1])]
        wgt = float(e[2]) if len(e) > 2 else 1.0
        if wgt < 0:
            raise WindowError(f"negative edge weight on ({e[0]!r}, {e[1]!r})")
        rows += [u, v]
        cols += [v, u]
        vals += [wgt, wgt]
    g = coo_matrix((vals, (rows, cols)), shape=(len(ids), len(ids)))
    m = dijkstra(g.tocsr(), directed=False)
    if np.isinf(m).any():
        i, j = np.argwhere(np.isinf(m))[0]
        raise WindowError(f"disconnected graph: no path between "
                          f"{ids[i]!r} and {ids[j]!r} (norm undefined)")
    bp = index[_canon_id(params.get("basepoint", ids[0]))]
    return MetricWindow(ids=tuple(ids), metric="matrix", basepoint=bp, matrix=m,
                        rim_margin=rim, recipe=recipe)


def _build_cloud(params: dict, seed: int, rim: float, recipe: dict) -> MetricWindow:
    metric = params.get("metric", "l2")
    if metric not in ("l1", "l2"):
        raise WindowError(f"cloud metric must be l1 or l2, got {metric!r}")
    if "points" in params:
        coords = np.asarray(params["points"], dtype=float)
        ids = tuple(map(tuple, coords.tolist()))
        bp_id = params.get("basepoint")
        bp = ids.index(tuple(bp_id)) if bp_id is not None else 0
    else:
        n = int(params["n"])
        dim = int(params.get("dim", 2))
        radius = float(params.get("radius", 100.0))
        rng = np.random.default_rng(seed)
        coords = rng.uniform(-radius, radius, size=(n, dim))
        coords[0] = 0.0
        ids = tuple(range(n))
        bp = 0
    if len(ids) > MAX_POINTS:
        raise WindowError(f"window too large: {len(ids)} points")
    return MetricWindow(ids=ids, metric=metric, basepoint=bp, coords=coords,
                        rim_margin=rim, recipe=recipe)


# -- file loaders -----------------------------------------------------------


def load_distance_csv(text: str, basepoint=None) -> MetricWindow:
    """Distance-matrix CSV: header row of point ids, then one row per point.

    Data rows may carry a leading row-label column; it is detected by width.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise WindowError("distance CSV needs a header row and data rows")
    header = rows[0]
    first = rows[1]
    if len(first) == len(header):
        labeled = len(header) > 0 and not _is_number(first[0])
    elif len(first) == len(header) + 1:
        labeled = True
        header = [""] + header
    else:
        raise WindowError("distance CSV row width does not match header")
    ids = tuple(header[1:] if labeled else header)
    data = []
    for r in rows[1:]:
        vals = r[1:] if labeled else r
        if len(vals) != len(ids):
            raise WindowError(f"distance CSV row width {len(vals)} does not "
                              f"match {len(ids)} header ids")
        data.append([float(v) for v in vals])
    m = np.asarray(data, dtype=float)
    if m.shape != (len(ids), len(ids)):
        raise WindowError(f"distance CSV shape {m.shape} does not match "
                          f"{len(ids)} header ids")
    if len(ids) > MAX_PAIRWISE_POINTS:
        raise WindowError(f"window too large for pairwise storage: "
                          f"{len(ids)} > {MAX_PAIRWISE_POINTS} points")
    bp = ids.index(basepoint) if basepoint is not None else 0
    return MetricWindow(ids=ids, metric="matrix", basepoint=bp, matrix=m).validate()


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_edge_list(text: str, basepoint=None) -> MetricWindow:
    """Graph edge list, one ``u v [weight]`` per line."""
    edges = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise WindowError(f"bad edge line: {line!r}")
        edges.append([parts[0], parts[1], float(parts[2]) if len(parts) > 2 else 1.0])
    params = {"edges": edges}
    if basepoint is not None:
        params["basepoint"] = basepoint
    return build({"kind": "graph", "params": params})


def load_recipe_json(text: str) -> MetricWindow:
    return build(json.loads(text))


def window_to_json(w: MetricWindow) -> dict:
    out = {
        "schema_version": 1,
        "points": [list(p) if isinstance(p, tuple) else p for p in w.ids],
        "basepoint": list(w.ids[w.basepoint]) if isinstance(w.ids[w.basepoint], tuple)
        else w.ids[w.basepoint],
        "radius": w.radius,
        "metric": w.metric,
        "n_points": w.n_points,
    }
    if w.recipe is not None:
        out["recipe"] = w.recipe
    return out
