"""Sublinear control profiles, divergence/separation witnesses, and the
bounded function algebra with its extension machinery.

A relation E on a window is controlled at scale eps beyond radius r when
every pair (y, x) in E with ||x|| >= r has displacement d(y, x) <= eps ||x||;
the control profile samples the exact sup of that ratio per annulus.  The
function algebra consists of bounded maps f with finite variation seminorm
sup |f(x) - f(y)| ||x|| / d(x, y); Urysohn quotients, hat/blend extensions
and simplex boundary pushes all live here with their quantitative bounds
asserted against measured constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import TOL, MetricWindow
from .covers import (DEFAULT_LINEARITY_THRESHOLD, LinearityWitness,
                     linearity_witness)


class SublinearError(ValueError):
    """Raised when an operation's preconditions fail."""


# -- relations and control profiles ------------------------------------------


@dataclass(frozen=True)
class Relation:
    """A finite set of ordered pairs (target, source) over one window."""

    window: MetricWindow
    targets: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.intp)
        s = np.asarray(self.sources, dtype=np.intp)
        if t.shape != s.shape:
            raise SublinearError("targets and sources must align")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "sources", s)

    def __len__(self):
        return int(self.targets.size)

    def inverse(self) -> "Relation":
        return Relation(self.window, self.sources.copy(), self.targets.copy())

    @classmethod
    def from_id_pairs(cls, window: MetricWindow, pairs) -> "Relation":
        t = window.indices_of([p[0] for p in pairs])
        s = window.indices_of([p[1] for p in pairs])
        return cls(window, t, s)

    @classmethod
    def diagonal(cls, window: MetricWindow) -> "Relation":
        idx = np.arange(window.n_points, dtype=np.intp)
        return cls(window, idx, idx.copy())


@dataclass(frozen=True)
class ControlProfile:
    """Samples (r, eps_forward(r), eps_backward(r)); eps nonincreasing in r."""

    samples: tuple  # ((r, eps_fwd, eps_bwd), ...)

    def eps_forward(self, r: float) -> float:
        return _profile_at(self.samples, r, 1)

    def eps_backward(self, r: float) -> float:
        return _profile_at(self.samples, r, 2)

    def to_json(self) -> dict:
        return {"schema_version": 1,
                "samples": [list(s) for s in self.samples]}


def _profile_at(samples, r, col):
    best = 0.0
    for s in samples:
        if s[0] >= r - TOL:
            return s[col]
        best = s[col]
    return best


def default_r_grid(window: MetricWindow, max_exact: int = 10_000,
                   steps: int = 64) -> np.ndarray:
    """Every distinct positive norm on small windows, else geometric steps."""
    pos = np.unique(window.norms[window.norms > TOL])
    if pos.size == 0:
        return np.array([0.0])
    if window.n_points <= max_exact:
        return pos
    return np.geomspace(pos.min(), pos.max(), steps)


def _directional_eps(w: MetricWindow, anchors: np.ndarray, others: np.ndarray,
                     r_grid: np.ndarray) -> np.ndarray:
    """sup over pairs with ||anchor|| >= r of d(other, anchor)/||anchor||."""
    if anchors.size == 0:
        return np.zeros(len(r_grid))
    norms = w.norms[anchors]
    disp = np.array([w.dist(int(a), int(b)) for a, b in zip(anchors, others)])
    keep = norms > TOL
    norms, disp = norms[keep], disp[keep]
    if norms.size == 0:
        return np.zeros(len(r_grid))
    order = np.argsort(norms)
    sorted_norms = norms[order]
    ratios = (disp / norms)[order]
    suffix = np.maximum.accumulate(ratios[::-1])[::-1]
    out = np.zeros(len(r_grid))
    for k, r in enumerate(r_grid):
        i = np.searchsorted(sorted_norms, r - TOL, side="left")
        out[k] = suffix[i] if i < suffix.size else 0.0
    return out


def control_profile(E: Relation, w: MetricWindow,
                    r_grid: np.ndarray | None = None) -> ControlProfile:
    """Exact displacement/norm sups per annulus, both directions.

    Pairs anchored at the basepoint (norm 0) are excluded from the ratios;
    the sup over an empty anchor set is 0.
    """
    if r_grid is None:
        r_grid = default_r_grid(w)
    r_grid = np.asarray(sorted(r_grid), dtype=float)
    if np.any(np.diff(r_grid) < -TOL):
        raise SublinearError("r_grid must be sorted ascending")
    fwd = _directional_eps(w, E.sources, E.targets, r_grid)
    bwd = _directional_eps(w, E.targets, E.sources, r_grid)
    samples = tuple((float(r), float(f), float(b))
                    for r, f, b in zip(r_grid, fwd, bwd))
    return ControlProfile(samples)


# -- divergence witnesses ------------------------------------------------------


def divergence_values(sets, w: MetricWindow) -> np.ndarray:
    """f(x) = max over the given sets E_i of d(x, E_i), for every point."""
    if not sets:
        raise SublinearError("need at least one set")
    vals = np.full(w.n_points, -np.inf)
    for s in sets:
        vals = np.maximum(vals, w.dists_to_set(np.asarray(list(s), dtype=np.intp)))
    return vals


def divergence_witness(sets, w: MetricWindow,
                       threshold: float = DEFAULT_LINEARITY_THRESHOLD,
                       r_hi: float | None = None) -> LinearityWitness:
    """Linearity witness for max_i d(x, E_i); the numeric divergence check.

    On an invalid witness the margin profile doubles as the diagnostic: the
    annulus points realizing the failing ratio are the near-counterexamples.
    """
    return linearity_witness(divergence_values(sets, w), w,
                             threshold=threshold, r_hi=r_hi)


# -- separation witnesses ------------------------------------------------------


@dataclass(frozen=True)
class SeparationWitness:
    """(D, r1) certifying d(A \\ B_r, B \\ B_r) >= D r for all real r in
    [r1, r_hi].

    Validity is exact: the gap function is piecewise constant in r, so the
    guarantee is checked at every segment's right endpoint.  Segments where
    either side empties out pass vacuously (the distance to the empty set is
    reported with the window sentinel but treated as infinite here).
    """

    D: float
    r1: float
    valid: bool
    r_hi: float
    profile: tuple = ()          # ((r, gap), ...) at the checked r values
    reason: str = ""

    def to_json(self) -> dict:
        return {"schema_version": 1, "D": self.D, "r1": self.r1,
                "valid": self.valid, "r_hi": self.r_hi,
                "profile": [list(p) for p in self.profile],
                "reason": self.reason}


def _gap_checkpoints(w: MetricWindow, A: np.ndarray, B: np.ndarray,
                     r_lo: float, r_hi: float) -> np.ndarray:
    norms = np.unique(np.concatenate([w.norms[A], w.norms[B]]))
    pts = norms[(norms >= r_lo - TOL) & (norms <= r_hi + TOL)]
    return np.unique(np.concatenate([pts, [r_hi]]))


def _tail(w: MetricWindow, S: np.ndarray, r: float) -> np.ndarray:
    return S[w.norms[S] >= r - TOL]


def gap_profile(A, B, w: MetricWindow, r_lo: float = 0.0,
                r_hi: float | None = None) -> tuple:
    """((r, gap(r)), ...) at every r where d(A\\B_r, B\\B_r) can change."""
    if r_hi is None:
        r_hi = w.rim
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    B = np.asarray(list(B), dtype=np.intp) if not isinstance(B, np.ndarray) else B
    out = []
    for r in _gap_checkpoints(w, A, B, r_lo, r_hi):
        a, b = _tail(w, A, r), _tail(w, B, r)
        gap = math.inf if (a.size == 0 or b.size == 0) else w.set_distance(a, b)
        out.append((float(r), gap))
    return tuple(out)


def separation_valid(A, B, w: MetricWindow, D: float, r1: float,
                     r_hi: float | None = None) -> tuple:
    """Exact validity of d(A\\B_r, B\\B_r) >= D r on [r1, r_hi].

    Returns (ok, first violating r or None).
    """
    for r, gap in gap_profile(A, B, w, r_lo=r1, r_hi=r_hi):
        if gap < D * r - TOL:
            return False, r
    return True, None


def separation_witness(A, B, w: MetricWindow,
                       threshold: float = DEFAULT_LINEARITY_THRESHOLD,
                       r_hi: float | None = None,
                       grid_steps: int = 16) -> SeparationWitness:
    """Best (D, r1) over a geometric r1 grid, exact within each range."""
    if r_hi is None:
        r_hi = w.rim
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    B = np.asarray(list(B), dtype=np.intp) if not isinstance(B, np.ndarray) else B
    if A.size == 0 or B.size == 0:
        raise SublinearError("A and B must be nonempty")
    prof = gap_profile(A, B, w, r_lo=0.0, r_hi=r_hi)
    rs = np.array([p[0] for p in prof])
    gaps = np.array([p[1] for p in prof])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(np.isinf(gaps), np.inf,
                          np.where(rs > TOL, gaps / np.maximum(rs, TOL), np.inf))
    suffix_min = np.minimum.accumulate(ratios[::-1])[::-1]
    finite_rs = rs[rs > TOL]
    if finite_rs.size == 0:
        return SeparationWitness(0.0, 0.0, False, float(r_hi), prof,
                                 reason="no positive checkpoint radius")
    lo = float(finite_rs.min())
    hi = max(w.radius / 2.0, lo)
    grid = np.geomspace(lo, hi, grid_steps) if hi > lo else np.array([lo])
    best_D, best_r1 = -math.inf, None
    for r1 in grid:
        i = np.searchsorted(rs, r1 - TOL, side="left")
        if i >= len(rs):
            continue
        d_here = float(suffix_min[i])
        if d_here > best_D:
            best_D, best_r1 = d_here, float(r1)
    if best_r1 is None or not math.isfinite(best_D):
        # every tail empties immediately: vacuous but useless
        return SeparationWitness(0.0, 0.0, False, float(r_hi), prof,
                                 reason="one side empty beyond every grid r1")
    valid = best_D > threshold
    reason = "" if valid else (
        f"best slope {best_D:.3g} below threshold {threshold:g}")
    return SeparationWitness(best_D, best_r1, valid, float(r_hi), prof, reason)


def divergence_to_separation(c: float, r0: float) -> tuple:
    """Two-set divergence slope (c, r0) yields the gap bound (D=c, r1=r0)."""
    return c, r0


SEPARATION_TO_DIVERGENCE_SHRINK = 1.0 - 1e-6


def separation_to_divergence(D: float, r1: float) -> tuple:
    """Gap bound (D, r1) yields a divergence slope with any C below
    min(1/2, D/4) at r0 = 2 r1; this pins C just under the cap."""
    return SEPARATION_TO_DIVERGENCE_SHRINK * min(0.5, D / 4.0), 2.0 * r1


def two_set_divergence_valid(A, B, w: MetricWindow, c: float, r0: float,
                             r_hi: float | None = None) -> tuple:
    """Exact check of max(d(x,A), d(x,B)) >= c ||x|| on r0 <= ||x|| <= r_hi."""
    if r_hi is None:
        r_hi = w.rim
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    B = np.asarray(list(B), dtype=np.intp) if not isinstance(B, np.ndarray) else B
    f = np.maximum(w.dists_to_set(A), w.dists_to_set(B))
    sel = (w.norms >= r0 - TOL) & (w.norms <= r_hi + TOL) & (w.norms > TOL)
    bad = np.flatnonzero(sel & (f < c * w.norms - TOL))
    if bad.size:
        return False, int(bad[0])
    return True, None


# -- variation seminorm and the Urysohn quotient ------------------------------


@dataclass(frozen=True)
class VariationSeminorm:
    """sup over ordered pairs of |f(x)-f(y)| ||x|| / d(x,y) and its argmax."""

    value: float
    argmax: tuple
    sup_abs: float
    bounded: bool = True

    def to_json(self) -> dict:
        return {"schema_version": 1, "value": self.value,
                "argmax": list(self.argmax), "sup_abs": self.sup_abs,
                "bounded": self.bounded}


def variation_seminorm(values: np.ndarray, w: MetricWindow,
                       subset: np.ndarray | None = None) -> VariationSeminorm:
    """Exact sup over ordered pairs; pairs anchored at norm 0 contribute 0.

    ``subset`` restricts both pair slots (used for seminorms on a subspace).
    """
    values = np.asarray(values, dtype=float)
    idx = np.arange(w.n_points, dtype=np.intp) if subset is None \
        else np.asarray(subset, dtype=np.intp)
    best, arg = 0.0, (int(idx[0]) if idx.size else 0,) * 2
    f = values[idx]
    norms = w.norms[idx]
    for a, i in enumerate(idx):
        if norms[a] <= TOL:
            continue
        d = w.dist_many(int(i), idx)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(f[a] - f) * norms[a] / d
        ratio[d <= TOL] = 0.0
        b = int(np.argmax(ratio))
        if ratio[b] > best:
            best, arg = float(ratio[b]), (int(i), int(idx[b]))
    return VariationSeminorm(best, arg, float(np.abs(f).max()) if idx.size else 0.0)


@dataclass(frozen=True)
class UrysohnReport:
    measured: VariationSeminorm
    hypothesis_c: float | None
    gap_form_ok: bool
    max_form_ok: bool
    bound: float | None
    bound_holds: bool | None

    def to_json(self) -> dict:
        return {"schema_version": 1, "measured": self.measured.to_json(),
                "hypothesis_c": self.hypothesis_c,
                "gap_form_ok": self.gap_form_ok,
                "max_form_ok": self.max_form_ok,
                "bound": self.bound, "bound_holds": self.bound_holds}


def urysohn_phi(A, B, w: MetricWindow, hypothesis_c: float | None = None):
    """phi(x) = d(x,A) / (d(x,A) + d(x,B)); 0 on A, 1 on B.

    With ``hypothesis_c`` supplied, both quantitative forms of the
    hypothesis are verified exactly before the 3/c seminorm bound is
    asserted: the gap form d(A\\B_r, B\\B_r) >= c r for all r >= 0, and the
    pointwise form max(d(x,A), d(x,B)) >= c ||x|| for every window point
    (the derived inequality the bound's proof actually consumes).
    """
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    B = np.asarray(list(B), dtype=np.intp) if not isinstance(B, np.ndarray) else B
    da, db = w.dists_to_set(A), w.dists_to_set(B)
    denom = da + db
    bad = np.flatnonzero(denom <= TOL)
    if bad.size:
        raise SublinearError(
            f"d(x,A)+d(x,B) vanishes at point {w.ids[int(bad[0])]!r}")
    phi = da / denom
    measured = variation_seminorm(phi, w)
    if hypothesis_c is None:
        return phi, UrysohnReport(measured, None, False, False, None, None)
    gap_ok, _ = separation_valid(A, B, w, hypothesis_c, r1=0.0, r_hi=w.radius)
    maxes = np.maximum(da, db)
    max_ok = bool(np.all(maxes >= hypothesis_c * w.norms - TOL))
    bound = 3.0 / hypothesis_c
    holds = measured.value <= bound + TOL
    if gap_ok and max_ok and not holds:
        raise SublinearError(
            f"variation bound 3/c violated: measured {measured.value:.6g} "
            f"> {bound:.6g}")
    return phi, UrysohnReport(measured, hypothesis_c, gap_ok, max_ok,
                              bound, holds)


# -- linear neighborhoods and extensions ---------------------------------------


def linear_neighborhood_check(A, W, w: MetricWindow,
                              threshold: float = DEFAULT_LINEARITY_THRESHOLD
                              ) -> SeparationWitness:
    """Check W is a linear neighborhood of A: d(A\\B_r, (X\\W)\\B_r) >= c r
    for all r down to the smallest positive norm.

    The measured slope is exact on the checkpoint lattice; an empty
    complement (W = X) is valid with the window sentinel as slope.
    """
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    Wm = np.zeros(w.n_points, dtype=bool)
    Wm[np.asarray(list(W), dtype=np.intp) if not isinstance(W, np.ndarray) else W] = True
    if not Wm[A].all():
        off = int(A[~Wm[A]][0])
        raise SublinearError(f"A not contained in W at point {w.ids[off]!r}")
    comp = np.flatnonzero(~Wm)
    if comp.size == 0:
        return SeparationWitness(w.sentinel, 0.0, True, w.radius,
                                 reason="complement empty")
    prof = gap_profile(A, comp, w, r_lo=0.0, r_hi=w.radius)
    finite = [(r, g) for r, g in prof if r > TOL]
    if not finite:
        return SeparationWitness(0.0, 0.0, False, w.radius, prof,
                                 reason="no positive checkpoint radius")
    D = min((g / r if math.isfinite(g) else math.inf) for r, g in finite)
    if not math.isfinite(D):
        D = w.sentinel
    valid = D > threshold
    return SeparationWitness(float(D), 0.0, valid, w.radius, prof,
                             reason="" if valid else
                             f"slope {D:.3g} below threshold {threshold:g}")


def _bump(A: np.ndarray, Wmask: np.ndarray, w: MetricWindow) -> np.ndarray:
    """d(x, X\\W) / (d(x,A) + d(x, X\\W)): 1 on A, 0 off W, sentinel-total."""
    comp = np.flatnonzero(~Wmask)
    dc = w.dists_to_set(comp)
    da = w.dists_to_set(A)
    denom = da + dc
    if np.any(denom <= TOL):
        bad = int(np.flatnonzero(denom <= TOL)[0])
        raise SublinearError(f"bump denominator vanishes at {w.ids[bad]!r}")
    return dc / denom


@dataclass(frozen=True)
class HatReport:
    c_f: float
    c_phi: float
    sup_f: float
    bound: float
    measured: float
    neighborhood: SeparationWitness

    def to_json(self) -> dict:
        return {"schema_version": 1, "c_f": self.c_f, "c_phi": self.c_phi,
                "sup_f": self.sup_f, "bound": self.bound,
                "measured": self.measured,
                "neighborhood": self.neighborhood.to_json()}


def hat_extension(f_values: np.ndarray, A, W, w: MetricWindow,
                  threshold: float = DEFAULT_LINEARITY_THRESHOLD):
    """Extend f from a linear neighborhood W of A to the window by damping:
    fhat = bump * f on W and 0 elsewhere; fhat = f on A.

    Asserts seminorm(fhat) <= c_f + sup|f| * c_phi with measured constants.
    """
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    Widx = np.asarray(list(W), dtype=np.intp) if not isinstance(W, np.ndarray) else W
    wit = linear_neighborhood_check(A, Widx, w, threshold=threshold)
    if not wit.valid:
        raise SublinearError(f"W is not a linear neighborhood of A: {wit.reason}")
    Wmask = np.zeros(w.n_points, dtype=bool)
    Wmask[Widx] = True
    f_values = np.asarray(f_values, dtype=float)
    phi = _bump(A, Wmask, w)
    fhat = np.where(Wmask, phi * f_values, 0.0)
    c_f = variation_seminorm(f_values, w, subset=Widx).value
    c_phi = variation_seminorm(phi, w).value
    sup_f = float(np.abs(f_values[Widx]).max()) if Widx.size else 0.0
    measured = variation_seminorm(fhat, w).value
    bound = c_f + sup_f * c_phi
    if measured > bound + 1e-7:
        raise SublinearError(
            f"hat seminorm bound violated: {measured:.6g} > {bound:.6g}")
    return fhat, HatReport(c_f, c_phi, sup_f, bound, measured, wit)


@dataclass(frozen=True)
class BlendReport:
    eps: float
    max_deviation: float
    w0_size: int
    neighborhood: SeparationWitness
    hat: HatReport

    def to_json(self) -> dict:
        return {"schema_version": 1, "eps": self.eps,
                "max_deviation": self.max_deviation, "w0_size": self.w0_size,
                "neighborhood": self.neighborhood.to_json(),
                "hat": self.hat.to_json()}


def blend_extension(f_values: np.ndarray, fbar: np.ndarray, A, W,
                    eps: float, w: MetricWindow,
                    threshold: float = DEFAULT_LINEARITY_THRESHOLD):
    """g = psi1 * fhat + psi2 * fbar with the psi pair cut from a linear
    neighborhood W0 of A inside {|fhat - fbar| < eps/2}.

    Asserts |g - fbar| <= eps everywhere and g = f on A.  Rejects (with the
    measured profile) when W0 fails the linearity check at this eps.
    """
    if eps <= 0:
        raise SublinearError("eps must be positive")
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    fbar = np.asarray(fbar, dtype=float)
    fhat, hat_report = hat_extension(f_values, A, W, w, threshold=threshold)
    if np.max(np.abs(fhat[A] - fbar[A])) > TOL:
        bad = int(A[np.argmax(np.abs(fhat[A] - fbar[A]))])
        raise SublinearError(f"fbar does not extend f on A at {w.ids[bad]!r}")
    q = fhat - fbar
    W0 = np.flatnonzero(np.abs(q) < eps / 2.0)
    wit = linear_neighborhood_check(A, W0, w, threshold=threshold)
    if not wit.valid:
        raise SublinearError(
            f"no linear neighborhood of A inside |fhat-fbar| < eps/2 "
            f"(measured slope {wit.D:.3g}): {wit.reason}")
    W0mask = np.zeros(w.n_points, dtype=bool)
    W0mask[W0] = True
    psi1 = _bump(A, W0mask, w)
    psi2 = 1.0 - psi1
    g = psi1 * fhat + psi2 * fbar
    dev = float(np.abs(g - fbar).max())
    if dev > eps + TOL:
        raise SublinearError(f"blend deviates by {dev:.6g} > eps {eps:.6g}")
    f_values = np.asarray(f_values, dtype=float)
    if np.max(np.abs(g[A] - f_values[A])) > 1e-9:
        raise SublinearError("blend does not extend f on A")
    return g, BlendReport(eps, dev, int(W0.size), wit, hat_report)


@dataclass(frozen=True)
class RatioReport:
    c_u: float
    c_v: float
    delta: float
    bound: float
    measured: float

    def to_json(self) -> dict:
        return {"schema_version": 1, "c_u": self.c_u, "c_v": self.c_v,
                "delta": self.delta, "bound": self.bound,
                "measured": self.measured}


def ratio_blend(u: np.ndarray, v: np.ndarray, delta: float, w: MetricWindow):
    """u/(u+v) for nonnegative u, v with u+v >= delta > 0.

    Asserts seminorm(u/(u+v)) <= (2 c_u + c_v) / delta with measured c's.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if delta <= 0:
        raise SublinearError("delta must be positive")
    if np.any(u < -TOL) or np.any(v < -TOL):
        raise SublinearError("u and v must be nonnegative")
    low = np.flatnonzero(u + v < delta - TOL)
    if low.size:
        raise SublinearError(
            f"u+v < delta at point {w.ids[int(low[0])]!r}")
    vals = u / (u + v)
    c_u = variation_seminorm(u, w).value
    c_v = variation_seminorm(v, w).value
    measured = variation_seminorm(vals, w).value
    bound = (2.0 * c_u + c_v) / delta
    if measured > bound + 1e-7:
        raise SublinearError(
            f"ratio seminorm bound violated: {measured:.6g} > {bound:.6g}")
    return vals, RatioReport(c_u, c_v, delta, bound, measured)


# -- simplex boundary extension -------------------------------------------------


def radial_retraction(z: np.ndarray) -> np.ndarray:
    """Project points of the standard simplex (rows) away from the
    barycenter onto the boundary face they hit first."""
    z = np.asarray(z, dtype=float)
    n1 = z.shape[-1]
    b = 1.0 / n1
    diff = z - b
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(diff < -TOL, b / (b - z), np.inf)
    tmin = t.min(axis=-1)
    if np.any(~np.isfinite(tmin)):
        raise SublinearError("radial retraction undefined at the barycenter")
    out = b + diff * tmin[..., None]
    return np.clip(out, 0.0, None)


@dataclass(frozen=True)
class SimplexPushReport:
    n: int
    perturbation_cap: float
    min_abs_sum: float
    min_clearance: float
    retraction_lipschitz: float

    def to_json(self) -> dict:
        return {"schema_version": 1, "n": self.n,
                "perturbation_cap": self.perturbation_cap,
                "min_abs_sum": self.min_abs_sum,
                "min_clearance": self.min_clearance,
                "retraction_lipschitz": self.retraction_lipschitz}


def simplex_boundary_extension(q, g, A, w: MetricWindow):
    """Push a perturbation q of a boundary-valued g back to the boundary.

    q and g are (n+1)-tuples of value arrays.  Requires g(x) on the boundary
    of the standard simplex for every x and ||q_i - g_i||_inf <= 1/(3(n+1)).
    Asserts sum_i |q_i(x)| >= 2/3 and barycenter clearance >= 1/(2(n+1)),
    then returns h = retraction(normalized |q|), which agrees with q on A.
    """
    q = np.stack([np.asarray(c, dtype=float) for c in q], axis=1)
    g = np.stack([np.asarray(c, dtype=float) for c in g], axis=1)
    if q.shape != g.shape:
        raise SublinearError("q and g must have matching components")
    npts, n1 = q.shape
    n = n1 - 1
    cap = 1.0 / (3.0 * n1)
    if np.any(g < -TOL) or np.any(np.abs(g.sum(axis=1) - 1.0) > 1e-7):
        raise SublinearError("g must take values in the standard simplex")
    off_boundary = np.flatnonzero(g.min(axis=1) > TOL)
    if off_boundary.size:
        raise SublinearError(
            f"g misses the boundary at {w.ids[int(off_boundary[0])]!r}")
    dev = np.abs(q - g)
    if dev.max() > cap + TOL:
        x, i = np.unravel_index(int(dev.argmax()), dev.shape)
        raise SublinearError(
            f"perturbation bound 1/(3(n+1)) violated at component {i}, "
            f"point {w.ids[int(x)]!r}: {dev[x, i]:.6g} > {cap:.6g}")
    sums = np.abs(q).sum(axis=1)
    min_sum = float(sums.min())
    if min_sum < 2.0 / 3.0 - TOL:
        raise SublinearError(f"sum |q_i| dips to {min_sum:.6g} < 2/3")
    qprime = np.abs(q) / sums[:, None]
    b = 1.0 / n1
    clearance = np.sqrt(((qprime - b) ** 2).sum(axis=1))
    min_clear = float(clearance.min())
    if min_clear < 1.0 / (2.0 * n1) - TOL:
        raise SublinearError(
            f"barycenter clearance {min_clear:.6g} < 1/(2(n+1))")
    h = radial_retraction(qprime)
    A = np.asarray(list(A), dtype=np.intp) if not isinstance(A, np.ndarray) else A
    if A.size and np.max(np.abs(h[A] - qprime[A])) > 1e-7:
        # on A, q = f maps into the boundary already, so the retraction fixes it
        raise SublinearError("retraction moved a point of A")
    lip = _retraction_lipschitz(qprime, h)
    return h, SimplexPushReport(n, cap, min_sum, min_clear, lip)


def _retraction_lipschitz(z: np.ndarray, rz: np.ndarray, limit: int = 2000) -> float:
    m = z.shape[0]
    idx = np.arange(m) if m <= limit else \
        np.random.default_rng(0).choice(m, size=limit, replace=False)
    zz, rr = z[idx], rz[idx]
    best = 0.0
    for k in range(len(idx)):
        dz = np.sqrt(((zz - zz[k]) ** 2).sum(axis=1))
        dr = np.sqrt(((rr - rr[k]) ** 2).sum(axis=1))
        keep = dz > TOL
        if keep.any():
            best = max(best, float((dr[keep] / dz[keep]).max()))
    return best


# -- quasi-isometry checks -------------------------------------------------------


@dataclass(frozen=True)
class QIReport:
    lam: float
    C: float
    D: float
    lower_ok: bool
    upper_ok: bool
    density: float
    density_ok: bool
    worst_lower: float
    worst_upper: float
    transport: tuple = ()   # ((eps, K_radius, measured_sup, ok), ...)

    @property
    def is_qi(self) -> bool:
        return self.lower_ok and self.upper_ok and self.density_ok

    def to_json(self) -> dict:
        return {"schema_version": 1, "lambda": self.lam, "C": self.C,
                "D": self.D, "lower_ok": self.lower_ok,
                "upper_ok": self.upper_ok, "density": self.density,
                "density_ok": self.density_ok,
                "worst_lower": self.worst_lower,
                "worst_upper": self.worst_upper,
                "transport": [list(t) for t in self.transport]}


def qi_check(f_idx: np.ndarray, wX: MetricWindow, wY: MetricWindow,
             lam: float, C: float, D: float,
             E: Relation | None = None,
             eps_grid=(1.0, 0.5, 0.25, 0.125)) -> QIReport:
    """Verify the two-sided quasi-isometry inequalities on all pairs, the
    D-density of the image, and (optionally) transport a controlled relation.

    For each eps the transport row realizes the excluded ball numerically:
    K = B(2 lam C) u B(4 lam C / eps) u K' with K' cut from E's own profile
    at eps / (4 lam^2); outside it the transported displacement ratio must
    not exceed eps.
    """
    if lam < 1.0:
        raise SublinearError("lambda must be >= 1")
    f_idx = np.asarray(f_idx, dtype=np.intp)
    if f_idx.shape != (wX.n_points,):
        raise SublinearError("f must assign a target index to every point")
    lower_ok = upper_ok = True
    worst_lower = worst_upper = 0.0
    for i in range(wX.n_points):
        dx = wX.dist_many(i, np.arange(wX.n_points, dtype=np.intp))
        dy = wY.dist_many(int(f_idx[i]), f_idx)
        low_slack = (dx / lam - C) - dy
        up_slack = dy - (lam * dx + C)
        worst_lower = max(worst_lower, float(low_slack.max()))
        worst_upper = max(worst_upper, float(up_slack.max()))
    lower_ok = worst_lower <= TOL
    upper_ok = worst_upper <= TOL
    image = np.unique(f_idx)
    density = float(wY.dists_to_set(image).max())
    density_ok = density <= D + TOL
    transport = []
    if E is not None:
        profile = control_profile(E, wX)
        rows = []
        src_norms = wX.norms[E.sources]
        disp_y = np.array([wY.dist(int(f_idx[t]), int(f_idx[s]))
                           for t, s in zip(E.targets, E.sources)])
        fy_norms = wY.norms[f_idx[E.sources]]
        for eps in eps_grid:
            kprime = 0.0
            for r, ef, eb in profile.samples:
                if max(ef, eb) <= eps / (4.0 * lam * lam) + TOL:
                    kprime = r
                    break
            else:
                kprime = math.inf
            k_radius = max(2.0 * lam * C,
                           (4.0 * lam * C / eps) if eps > 0 else math.inf,
                           kprime)
            keep = src_norms > k_radius + TOL
            if keep.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratios = np.where(fy_norms[keep] > TOL,
                                      disp_y[keep] / fy_norms[keep], 0.0)
                measured = float(ratios.max())
            else:
                measured = 0.0
            rows.append((float(eps), float(k_radius), measured,
                         bool(measured <= eps + TOL)))
        transport = rows
    return QIReport(lam, C, D, lower_ok, upper_ok, density, density_ok,
                    worst_lower, worst_upper, tuple(transport))
