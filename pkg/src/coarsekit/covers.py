"""Cover and set-family statistics.

Mesh, multiplicity, the pointwise Lebesgue function L(x) = max over members
V of d(x, X \\ V), the derived Lebesgue number (min over window points), the
r-disjointness test, fattening, and linearity witnesses for functions that
should grow at least like c * ||x||.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import TOL, MetricWindow


class CoverError(ValueError):
    """Raised on malformed families or covers."""


@dataclass(frozen=True)
class SetFamily:
    """An indexed family of nonempty point subsets bound to one window."""

    window: MetricWindow
    members: tuple  # tuple[frozenset[int], ...]

    def __post_init__(self):
        mems = tuple(frozenset(m) for m in self.members)
        object.__setattr__(self, "members", mems)
        n = self.window.n_points
        for k, m in enumerate(mems):
            if not m:
                raise CoverError(f"member {k} is empty")
            for i in m:
                if not (0 <= i < n):
                    raise CoverError(f"member {k} contains foreign index {i}")

    def __len__(self):
        return len(self.members)

    def masks(self) -> np.ndarray:
        out = np.zeros((len(self.members), self.window.n_points), dtype=bool)
        for k, m in enumerate(self.members):
            out[k, list(m)] = True
        return out

    def point_members(self) -> list:
        """For each point index, the tuple of member indices containing it."""
        owners = [[] for _ in range(self.window.n_points)]
        for k, m in enumerate(self.members):
            for i in m:
                owners[i].append(k)
        return [tuple(o) for o in owners]


class Cover(SetFamily):
    """A set family whose union is the whole window."""

    def __post_init__(self):
        super().__post_init__()
        covered = np.zeros(self.window.n_points, dtype=bool)
        for m in self.members:
            covered[list(m)] = True
        if not covered.all():
            i = int(np.flatnonzero(~covered)[0])
            raise CoverError(f"not a cover: point {self.window.ids[i]!r} uncovered")


def mesh(family: SetFamily) -> float:
    """Largest member diameter."""
    if not family.members:
        raise CoverError("mesh of an empty family")
    return max(family.window.diameter(np.fromiter(m, dtype=np.intp))
               for m in family.members)


def multiplicity(family: SetFamily) -> int:
    """Max number of members containing a common point.

    Equals the least m such that every intersection of m+1 distinct members
    is empty.
    """
    counts = np.zeros(family.window.n_points, dtype=int)
    for m in family.members:
        counts[list(m)] += 1
    return int(counts.max()) if counts.size else 0


def is_r_disjoint(family: SetFamily, r: float) -> bool:
    """True iff all distinct members are at set distance > r."""
    if r < 0:
        raise CoverError("r must be >= 0")
    w = family.window
    idx = [np.fromiter(m, dtype=np.intp) for m in family.members]
    boxes = None
    if w.coords is not None:
        boxes = [(w.coords[a].min(axis=0), w.coords[a].max(axis=0)) for a in idx]
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            if boxes is not None:
                gap = np.maximum(0.0, np.maximum(boxes[b][0] - boxes[a][1],
                                                 boxes[a][0] - boxes[b][1]))
                # coordinate-gap lower-bounds every supported metric
                if gap.max() > r + TOL:
                    continue
            if w.set_distance(idx[a], idx[b]) <= r + TOL:
                return False
    return True


def fatten(family: SetFamily, s: float) -> SetFamily:
    """Replace each member by its closed s-neighborhood in the window."""
    if s < 0:
        raise CoverError("s must be >= 0")
    if s == 0:
        return SetFamily(family.window, family.members)
    w = family.window
    out = []
    for m in family.members:
        d = w.dists_to_set(np.fromiter(m, dtype=np.intp))
        out.append(frozenset(np.flatnonzero(d <= s + TOL).tolist()))
    return SetFamily(w, tuple(out))


def lebesgue_function(cover: Cover, i: int) -> float:
    """L(x) = max over members V of d(x, X \\ V); sentinel when some V = X."""
    w = cover.window
    best = 0.0
    masks = _cover_masks(cover)
    for k in _owners(cover)[i]:
        d = w.dist_to_complement(i, masks[k])
        if d > best:
            best = d
    return best


def lebesgue_number(cover: Cover, points: np.ndarray | None = None) -> float:
    """min over window points of the Lebesgue function (early-capped)."""
    w = cover.window
    masks = _cover_masks(cover)
    owners = _owners(cover)
    pts = range(w.n_points) if points is None else points
    best = math.inf
    for i in pts:
        i = int(i)
        val = 0.0
        for k in owners[i]:
            d = w.dist_to_complement(i, masks[k], cap=best)
            if d > val:
                val = d
            if val >= best:
                break
        if val < best:
            best = val
    return float(best)


def lebesgue_exceeds(cover: Cover, r: float, points: np.ndarray | None = None) -> tuple:
    """Check L(x) > r for every point; returns (ok, first offending index)."""
    w = cover.window
    masks = _cover_masks(cover)
    owners = _owners(cover)
    pts = range(w.n_points) if points is None else points
    for i in pts:
        i = int(i)
        ok = False
        for k in owners[i]:
            if w.dist_to_complement(i, masks[k], cap=r) > r + TOL:
                ok = True
                break
        if not ok:
            return False, i
    return True, None


def lebesgue_values(family: SetFamily) -> np.ndarray:
    """The Lebesgue function at every window point, vectorized per member.

    Efficient when the family has few members; each member contributes its
    complement-distance field, zeroed outside the member.
    """
    w = family.window
    out = np.zeros(w.n_points)
    all_idx = np.arange(w.n_points, dtype=np.intp)
    for m in family.members:
        comp = np.setdiff1d(all_idx, np.fromiter(m, dtype=np.intp),
                            assume_unique=False)
        d = w.dists_to_set(comp)
        inside = np.zeros(w.n_points, dtype=bool)
        inside[list(m)] = True
        out = np.maximum(out, np.where(inside, d, 0.0))
    return out


def _cover_masks(cover: Cover) -> np.ndarray:
    cache = getattr(cover, "_masks_cache", None)
    if cache is None:
        cache = cover.masks()
        object.__setattr__(cover, "_masks_cache", cache)
    return cache


def _owners(cover: Cover) -> list:
    cache = getattr(cover, "_owners_cache", None)
    if cache is None:
        cache = cover.point_members()
        object.__setattr__(cover, "_owners_cache", cache)
    return cache


def cover_stats(cover: Cover, profile_annuli: int = 8) -> dict:
    """mesh / multiplicity / Lebesgue number plus a per-annulus profile."""
    w = cover.window
    L = lebesgue_number(cover)
    prof = []
    radius = w.radius
    if radius > 0:
        edges = np.linspace(0.0, radius, profile_annuli + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            pts = w.annulus(a, b)
            if pts.size == 0:
                continue
            vals = [lebesgue_function(cover, int(i)) for i in pts]
            prof.append({"r_lo": float(a), "r_hi": float(b),
                         "min": float(min(vals)), "median": float(np.median(vals)),
                         "max": float(max(vals))})
    return {
        "schema_version": 1,
        "mesh": mesh(cover),
        "multiplicity": multiplicity(cover),
        "lebesgue_number": L,
        "n_members": len(cover),
        "lebesgue_profile": prof,
    }


# -- linearity witnesses ------------------------------------------------------


@dataclass(frozen=True)
class LinearityWitness:
    """A pair (c, r0) certifying f(x) >= c * ||x|| on the annulus [r0, r_hi].

    ``margin_profile`` samples min f(x)/||x|| per candidate r0 for reporting;
    ``ladder`` may carry slopes re-measured at 2x and 4x radius.
    """

    c: float
    r0: float
    valid: bool
    r_hi: float
    margin_profile: tuple = ()
    reason: str = ""
    ladder: tuple = ()

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "c": self.c, "r0": self.r0, "valid": self.valid, "r_hi": self.r_hi,
            "margin_profile": [list(p) for p in self.margin_profile],
            "reason": self.reason,
            "ladder": [list(p) for p in self.ladder],
        }


DEFAULT_LINEARITY_THRESHOLD = 1e-3


def linearity_witness(values: np.ndarray, window: MetricWindow,
                      threshold: float = DEFAULT_LINEARITY_THRESHOLD,
                      r_hi: float | None = None,
                      grid_steps: int = 16) -> LinearityWitness:
    """Best (c, r0) with f(x) >= c ||x|| for all window points in [r0, r_hi].

    r0 ranges over a geometric grid from the smallest positive norm to
    radius/2; c(r0) is the exact min of f/||x|| over the annulus.  The
    witness is valid iff the best c clears the threshold.
    """
    values = np.asarray(values, dtype=float)
    norms = window.norms
    if r_hi is None:
        r_hi = window.rim
    pos = norms[norms > TOL]
    if pos.size == 0:
        return LinearityWitness(0.0, 0.0, False, r_hi,
                                reason="no point with positive norm")
    lo = float(pos.min())
    hi = max(window.radius / 2.0, lo)
    if hi <= lo:
        grid = np.array([lo])
    else:
        grid = np.geomspace(lo, hi, grid_steps)
    best_c, best_r0 = -math.inf, None
    profile = []
    for r0 in grid:
        sel = (norms >= r0 - TOL) & (norms <= r_hi + TOL) & (norms > TOL)
        if not sel.any():
            continue
        c = float((values[sel] / norms[sel]).min())
        profile.append((float(r0), c))
        if c > best_c:
            best_c, best_r0 = c, float(r0)
    if best_r0 is None:
        return LinearityWitness(0.0, 0.0, False, r_hi, tuple(profile),
                                reason="annulus empty for every candidate r0")
    valid = best_c > threshold
    reason = "" if valid else f"best slope {best_c:.3g} below threshold {threshold:g}"
    return LinearityWitness(best_c, best_r0, valid, float(r_hi), tuple(profile),
                            reason=reason)


def linearity_ladder(make_window, make_values, radii,
                     threshold: float = DEFAULT_LINEARITY_THRESHOLD) -> tuple:
    """Re-measure a linearity slope across a ladder of window radii.

    ``make_window(R)`` builds the window at radius R and ``make_values(w)``
    evaluates the function on it.  Returns ((R, c), ...); a slope that keeps
    shrinking across rungs flags the function as sublinear at desk scale.
    """
    rungs = []
    for R in radii:
        w = make_window(R)
        wit = linearity_witness(make_values(w), w, threshold=threshold)
        rungs.append((float(R), wit.c))
    return tuple(rungs)


def ladder_flags_sublinear(ladder, shrink_ratio: float = 0.6) -> bool:
    """True when the measured slope decays consistently along the ladder."""
    if len(ladder) < 2:
        return False
    cs = [c for _, c in ladder]
    return all(b < a * shrink_ratio + TOL for a, b in zip(cs[:-1], cs[1:]))
