"""Nerve complexes of covers, barycentric projections with measured
constants, and the skeleton push that trades an n-simplex for its boundary.

The nerve's vertices are the cover members; a simplex is any set of members
with a common point.  The projection sends x to the normalized vector of
complement distances, so its support always spans a simplex.  All Lipschitz
and coboundedness constants are exact sups over window pairs, not estimates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .space import TOL, MetricWindow
from .covers import Cover, lebesgue_number, mesh, multiplicity
from .sublinear import radial_retraction


class NerveError(ValueError):
    """Raised on malformed projections or disagreeing boundary maps."""


@dataclass(frozen=True)
class NerveComplex:
    """Vertices are member indices; simplices are downward closed."""

    n_vertices: int
    simplices: frozenset  # frozenset[frozenset[int]]

    @property
    def dimension(self) -> int:
        return max((len(s) for s in self.simplices), default=0) - 1

    def simplices_of_dim(self, d: int) -> list:
        return sorted((s for s in self.simplices if len(s) == d + 1),
                      key=sorted)

    def maximal_simplices(self) -> list:
        sims = set(self.simplices)
        return sorted((s for s in sims
                       if not any(s < t for t in sims if len(t) == len(s) + 1)),
                      key=lambda s: (len(s), sorted(s)))

    def to_json(self) -> dict:
        return {"schema_version": 1, "n_vertices": self.n_vertices,
                "simplices": sorted([sorted(s) for s in self.simplices])}


def build_nerve(cover: Cover) -> NerveComplex:
    """Simplices are exactly the member subsets with nonempty intersection."""
    supports = {frozenset(s) for s in cover.point_members() if s}
    sims = set()
    for sup in supports:
        items = sorted(sup)
        for k in range(1, len(items) + 1):
            sims.update(frozenset(c) for c in itertools.combinations(items, k))
    return NerveComplex(len(cover), frozenset(sims))


@dataclass(frozen=True)
class NerveMap:
    """Barycentric projection of a cover with its measured constants.

    ``coords[x, v] = d(x, X \\ V_v) / sum_w d(x, X \\ V_w)``: nonnegative,
    summing to one, supported on a simplex of the nerve.
    """

    cover: Cover
    nerve: NerveComplex
    coords: np.ndarray
    lipschitz: float
    cobounded: float

    @property
    def window(self) -> MetricWindow:
        return self.cover.window

    def support(self, i: int) -> frozenset:
        return frozenset(np.flatnonzero(self.coords[i] > TOL).tolist())


def _complement_distances(cover: Cover) -> np.ndarray:
    w = cover.window
    out = np.zeros((w.n_points, len(cover)))
    for k, m in enumerate(cover.members):
        comp = np.setdiff1d(np.arange(w.n_points, dtype=np.intp),
                            np.fromiter(m, dtype=np.intp))
        out[:, k] = w.dists_to_set(comp)
        outside = np.ones(w.n_points, dtype=bool)
        outside[list(m)] = False
        out[outside, k] = 0.0
    return out


def map_lipschitz(coords: np.ndarray, w: MetricWindow) -> float:
    """Exact sup over pairs of euclidean image distance over window distance."""
    best = 0.0
    n = w.n_points
    for i in range(n):
        d = w.dist_many(i, np.arange(n, dtype=np.intp))
        img = np.sqrt(((coords - coords[i]) ** 2).sum(axis=1))
        keep = d > TOL
        if keep.any():
            best = max(best, float((img[keep] / d[keep]).max()))
    return best


def map_cobounded(coords: np.ndarray, nerve: NerveComplex,
                  w: MetricWindow) -> float:
    """max over simplices of diam(preimage of the closed simplex)."""
    supports = [frozenset(np.flatnonzero(coords[i] > TOL).tolist())
                for i in range(w.n_points)]
    best = 0.0
    for sigma in nerve.maximal_simplices():
        pre = [i for i, s in enumerate(supports) if s <= sigma]
        if len(pre) > 1:
            best = max(best, w.diameter(np.array(pre, dtype=np.intp)))
    return best


def projection(cover: Cover) -> NerveMap:
    """The canonical barycentric projection onto the nerve."""
    w = cover.window
    dists = _complement_distances(cover)
    sums = dists.sum(axis=1)
    if np.any(sums <= TOL):
        i = int(np.flatnonzero(sums <= TOL)[0])
        raise NerveError(f"point {w.ids[i]!r} lies in no member interior; "
                         "cover invariant violated")
    coords = dists / sums[:, None]
    nerve = build_nerve(cover)
    lip = map_lipschitz(coords, w)
    cob = map_cobounded(coords, nerve, w)
    return NerveMap(cover, nerve, coords, lip, cob)


# -- boundary map generators -----------------------------------------------------


def radial_or_nearest_boundary(local: np.ndarray) -> np.ndarray:
    """Default boundary map on a top simplex: push through the barycenter ray,
    or to the nearest boundary point when a value sits at the barycenter."""
    local = np.asarray(local, dtype=float)
    n1 = local.shape[1]
    b = 1.0 / n1
    at_b = np.abs(local - b).max(axis=1) <= TOL
    out = np.empty_like(local)
    if (~at_b).any():
        out[~at_b] = radial_retraction(local[~at_b])
    if at_b.any():
        # orthogonal drop of the barycenter onto the lowest-index face
        v = np.full(n1, b + b / (n1 - 1))
        v[0] = 0.0
        out[at_b] = v
    return out


@dataclass(frozen=True)
class SkeletonPushReport:
    n: int
    lam: float
    m: float
    b: float
    generator_lipschitz: tuple
    lebesgue_bound: float
    lebesgue_measured: float
    mesh_before: float
    mesh_after: float

    def to_json(self) -> dict:
        return {"schema_version": 1, "n": self.n, "lambda": self.lam,
                "m": self.m, "b": self.b,
                "generator_lipschitz": list(self.generator_lipschitz),
                "lebesgue_bound": self.lebesgue_bound,
                "lebesgue_measured": self.lebesgue_measured,
                "mesh_before": self.mesh_before,
                "mesh_after": self.mesh_after}


def skeleton_push(pmap: NerveMap, boundary_maps: dict | None = None,
                  b: float | None = None, top_dim: int | None = None):
    """Replace the projection on every top-simplex preimage by a boundary
    map, producing coordinates in the next skeleton down and the derived
    star cover.

    ``boundary_maps`` maps a top simplex (frozenset of vertex indices) to an
    array of boundary-valued local coordinates on its preimage; omitted
    simplices fall back to the radial generator.  Each map must agree with
    the projection on boundary preimages and be Lipschitz below ``b`` times
    the projection constant (``b`` defaults to just above the measured
    ratio).

    Returns ``(q_coords, derived_cover, report)`` and asserts the three
    containment/multiplicity/Lebesgue conclusions, raising on violation.
    """
    w = pmap.window
    n = pmap.nerve.dimension if top_dim is None else top_dim
    top = pmap.nerve.simplices_of_dim(n)
    suports = [pmap.support(i) for i in range(w.n_points)]
    q = pmap.coords.copy()
    owner = {}
    gen_lips = []
    for sigma in top:
        verts = sorted(sigma)
        pre = np.array([i for i, s in enumerate(suports) if s <= sigma],
                       dtype=np.intp)
        if pre.size == 0:
            continue
        local = pmap.coords[np.ix_(pre, verts)]
        if boundary_maps is not None and sigma in boundary_maps:
            glocal = np.asarray(boundary_maps[sigma], dtype=float)
            if glocal.shape != local.shape:
                raise NerveError(f"boundary map shape mismatch on {verts}")
        else:
            glocal = radial_or_nearest_boundary(local)
        if np.any(glocal < -TOL) or np.any(np.abs(glocal.sum(axis=1) - 1) > 1e-7) \
                or np.any(glocal.min(axis=1) > TOL):
            raise NerveError(f"boundary map on {verts} leaves the boundary")
        # boundary agreement: where the projection is already on a face
        on_face = local.min(axis=1) <= TOL
        if on_face.any() and np.max(np.abs(glocal[on_face] - local[on_face])) > 1e-7:
            raise NerveError(f"boundary map on {verts} disagrees with the "
                             "projection on the boundary preimage")
        lip = _local_lipschitz(glocal, pre, w)
        gen_lips.append(lip)
        for row, i in enumerate(pre):
            prev = owner.get(int(i))
            if prev is not None:
                if np.max(np.abs(q[i, verts] - glocal[row])) > 1e-7:
                    raise NerveError(
                        f"boundary maps disagree at {w.ids[int(i)]!r} "
                        f"between simplices {sorted(prev)} and {verts}")
                continue
            q[i] = 0.0
            q[i, verts] = glocal[row]
            owner[int(i)] = sigma
    lam = pmap.lipschitz
    if lam <= TOL:
        raise NerveError("projection has zero Lipschitz constant")
    max_gen = max(gen_lips, default=0.0)
    if b is None:
        b = max(max_gen / lam, 1.0) * (1.0 + 1e-9)
    if max_gen >= b * lam - TOL and max_gen > 0:
        raise NerveError(f"generator Lipschitz {max_gen:.6g} not below "
                         f"b*lambda = {b * lam:.6g}")
    # derived star cover and the three conclusions
    members = []
    for v in range(len(pmap.cover)):
        star = np.flatnonzero(q[:, v] > TOL)
        if star.size:
            p_star = pmap.coords[:, v] > TOL
            if not p_star[star].all():
                bad = int(star[~p_star[star]][0])
                raise NerveError(f"pushed star of vertex {v} escapes the "
                                 f"projection star at {w.ids[bad]!r}")
            members.append(frozenset(star.tolist()))
    derived = Cover(w, tuple(members))
    mult_after = multiplicity(derived)
    if mult_after > max(n, 1):
        raise NerveError(f"pushed cover multiplicity {mult_after} exceeds {n}")
    m = 1.0 / lam
    bound = m / (b * (n + 1))
    measured = lebesgue_number(derived)
    if measured < bound - TOL:
        raise NerveError(f"pushed cover Lebesgue number {measured:.6g} below "
                         f"m/(b(n+1)) = {bound:.6g}")
    report = SkeletonPushReport(n, lam, m, float(b), tuple(gen_lips), bound,
                                measured, mesh(pmap.cover), mesh(derived))
    return q, derived, report


def _local_lipschitz(values: np.ndarray, idx: np.ndarray, w: MetricWindow) -> float:
    best = 0.0
    for a in range(idx.size):
        d = w.dist_many(int(idx[a]), idx)
        img = np.sqrt(((values - values[a]) ** 2).sum(axis=1))
        keep = d > TOL
        if keep.any():
            best = max(best, float((img[keep] / d[keep]).max()))
    return best


def star_cover(pmap: NerveMap) -> Cover:
    """The cover by open vertex stars pulled back through the projection."""
    members = []
    for v in range(len(pmap.cover)):
        star = np.flatnonzero(pmap.coords[:, v] > TOL)
        if star.size:
            members.append(frozenset(star.tolist()))
    return Cover(pmap.window, tuple(members))
