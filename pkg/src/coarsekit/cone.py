"""Rescaled-limit machinery at desk scale.

Ultralimits are emulated by tails of an explicit geometric index set: a
sequence lives on indices f(1) < f(2) < ... with f(k+1) >= a f(k), and every
limit along it becomes a tail median with a spread diagnostic (spread near
zero signals a genuine limit, a large spread marks the value as dependent on
the choice of tail).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .space import TOL, MetricWindow
from .covers import LinearityWitness
from .sublinear import divergence_witness


class ConeError(ValueError):
    """Raised when sequence preconditions fail."""


@dataclass(frozen=True)
class ExponentialSequence:
    """Strictly increasing indices with geometric growth factor a > 1."""

    a: float
    values: tuple

    def __post_init__(self):
        if self.a <= 1.0:
            raise ConeError("growth factor a must exceed 1")
        v = tuple(int(x) for x in self.values)
        if len(v) < 1:
            raise ConeError("need at least one index")
        for x, y in zip(v, v[1:]):
            if y < self.a * x - TOL:
                raise ConeError(f"growth violated: {y} < {self.a} * {x}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def to_json(self) -> dict:
        return {"schema_version": 1, "a": self.a, "values": list(self.values)}


def exp_sequence(a: float, start: int, length: int,
                 limit: int = 10 ** 12) -> ExponentialSequence:
    """The ceiling chain f(k+1) = ceil(a f(k)) from a starting index."""
    if start < 1:
        raise ConeError("start must be >= 1")
    if length < 2:
        raise ConeError("length must be >= 2")
    vals = [int(start)]
    for _ in range(length - 1):
        nxt = math.ceil(a * vals[-1])
        if nxt > limit:
            raise ConeError(f"index {nxt} overflows the range limit {limit}")
        vals.append(int(nxt))
    return ExponentialSequence(a, tuple(vals))


@dataclass(frozen=True)
class ScaledSequence:
    """Points x_n indexed by an exponential sequence, with ||x_n|| <= Cseq n."""

    seq: ExponentialSequence
    window: MetricWindow
    points: tuple          # window indices aligned with seq.values
    cseq: float

    def __post_init__(self):
        if len(self.points) != len(self.seq):
            raise ConeError("points must align with the index sequence")
        pts = tuple(int(i) for i in self.points)
        object.__setattr__(self, "points", pts)
        for n, i in zip(self.seq.values, pts):
            if self.window.norm(i) > self.cseq * n + TOL:
                raise ConeError(
                    f"linear bound violated at index {n}: "
                    f"||x|| = {self.window.norm(i):.6g} > {self.cseq} * {n}")

    def norms(self) -> np.ndarray:
        return self.window.norms[np.array(self.points, dtype=np.intp)]

    def trace(self) -> np.ndarray:
        return np.unique(np.array(self.points, dtype=np.intp))


def cone_distance(x: ScaledSequence, y: ScaledSequence, tail: int) -> tuple:
    """Tail-median estimate of the rescaled distance with its spread.

    Returns (estimate, spread) over the last ``tail`` shared indices; the
    spread (max - min) quantifies how much the choice of tail matters.
    """
    if x.seq.values != y.seq.values:
        raise ConeError("sequences must share an index set")
    if not (1 <= tail <= len(x.seq)):
        raise ConeError("tail must lie within the sequence length")
    ratios = []
    for n, i, j in list(zip(x.seq.values, x.points, y.points))[-tail:]:
        ratios.append(x.window.dist(i, j) / n)
    ratios = np.array(ratios)
    return float(np.median(ratios)), float(ratios.max() - ratios.min())


@dataclass(frozen=True)
class GapClaimReport:
    passed: bool
    argmin_ok: bool
    cross_bound_ok: bool
    a_required: float
    a_actual: float
    failures: tuple

    def to_json(self) -> dict:
        return {"schema_version": 1, "passed": self.passed,
                "argmin_ok": self.argmin_ok,
                "cross_bound_ok": self.cross_bound_ok,
                "a_required": self.a_required, "a_actual": self.a_actual,
                "failures": [list(f) for f in self.failures]}


def required_growth(D1: float, D2: float, delta: float) -> float:
    """The growth threshold making the nearest-index claim provable."""
    if min(D1, D2) <= delta:
        raise ConeError("delta must stay below both norm slopes")
    return max((2 * D1 + D2 + 3 * delta) / (D2 - delta),
               (2 * D2 + D1 + 3 * delta) / (D1 - delta))


def gap_claim_check(x: ScaledSequence, y: ScaledSequence, D1: float,
                    D2: float, delta: float) -> GapClaimReport:
    """Check that cross-index distances never undercut the diagonal.

    Preconditions (verified, named index on failure): the norm bands
    | ||x_n|| - D1 n | < delta n and | ||y_n|| - D2 n | < delta n, and the
    index growth a >= max((2D1+D2+3d)/(D2-d), (2D2+D1+3d)/(D1-d)).  Asserts
    that min_m d(x_n, y_m) is attained at m = n for every n, and checks the
    cross-index lower bound (a^l (D2-delta) - (D1+delta)) f(k) numerically
    for every pair m > n.
    """
    if x.seq.values != y.seq.values:
        raise ConeError("sequences must share an index set")
    w = x.window
    ns = x.seq.values
    for n, i in zip(ns, x.points):
        if abs(w.norm(i) - D1 * n) >= delta * n:
            raise ConeError(f"x norm band fails at index {n}")
    for n, j in zip(ns, y.points):
        if abs(w.norm(j) - D2 * n) >= delta * n:
            raise ConeError(f"y norm band fails at index {n}")
    a_req = required_growth(D1, D2, delta)
    if x.seq.a < a_req - TOL:
        raise ConeError(f"growth factor {x.seq.a} below the required "
                        f"{a_req:.6g}")
    failures = []
    argmin_ok = True
    y_idx = np.array(y.points, dtype=np.intp)
    for k, (n, i) in enumerate(zip(ns, x.points)):
        dists = w.dist_many(i, y_idx)
        if dists.min() < dists[k] - TOL:
            argmin_ok = False
            failures.append(("argmin", n, int(ns[int(np.argmin(dists))])))
    cross_ok = True
    for k in range(len(ns)):
        for l in range(1, len(ns) - k):
            lhs = w.dist(x.points[k], y.points[k + l])
            bound = ((x.seq.a ** l) * (D2 - delta) - (D1 + delta)) * ns[k]
            if lhs < bound - TOL:
                cross_ok = False
                failures.append(("cross", int(ns[k]), int(ns[k + l])))
    return GapClaimReport(argmin_ok and cross_ok, argmin_ok, cross_ok,
                          a_req, x.seq.a, tuple(failures))


def xi_separation(x: ScaledSequence, y: ScaledSequence,
                  eps: float) -> LinearityWitness:
    """Divergence of the two traces inside their union window.

    Requires the inequivalence hypothesis d(x_n, y_n)/n > eps at every
    index; the witness comes from the divergence of the two trace sets in
    the window spanned by the traces and the basepoint.
    """
    if x.seq.values != y.seq.values:
        raise ConeError("sequences must share an index set")
    if eps <= 0:
        raise ConeError("eps must be positive")
    w = x.window
    for n, i, j in zip(x.seq.values, x.points, y.points):
        if w.dist(i, j) / n <= eps + TOL:
            raise ConeError(f"inequivalence hypothesis fails at index {n}: "
                            f"d/n = {w.dist(i, j) / n:.6g} <= {eps}")
    union = np.unique(np.concatenate([
        x.trace(), y.trace(), np.array([w.basepoint], dtype=np.intp)]))
    sub = _subwindow(w, union)
    remap = {int(orig): k for k, orig in enumerate(union)}
    tr_x = np.array(sorted({remap[int(i)] for i in x.points}), dtype=np.intp)
    tr_y = np.array(sorted({remap[int(j)] for j in y.points}), dtype=np.intp)
    return divergence_witness([tr_x, tr_y], sub, r_hi=sub.radius)


def _subwindow(w: MetricWindow, indices: np.ndarray) -> MetricWindow:
    ids = tuple(w.ids[int(i)] for i in indices)
    bp = int(np.flatnonzero(indices == w.basepoint)[0])
    if w.metric == "matrix":
        sub = w.matrix[np.ix_(indices, indices)]
        return MetricWindow(ids=ids, metric="matrix", basepoint=bp, matrix=sub)
    return MetricWindow(ids=ids, metric=w.metric, basepoint=bp,
                        coords=w.coords[indices], base_dim=w.base_dim,
                        base_metric=w.base_metric)
