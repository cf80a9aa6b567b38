"""Dimension certificates: constructive covers, verification, greedy search,
product certificates, and the parabolic worked example.

A certificate claims dimension <= n on a window by exhibiting, for each r in
a geometric grid, a cover with mesh <= C r, multiplicity <= n+1 and Lebesgue
number > r (plus the ball-meeting form: B_r(x) meets at most n+1 members).
Constructions are verified, never trusted: every emitted certificate passes
:func:`verify` with measured constants recorded.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .space import TOL, MetricWindow, build
from .covers import (Cover, CoverError, SetFamily, lebesgue_exceeds,
                     lebesgue_number, mesh, multiplicity)
from .sublinear import Relation, control_profile, divergence_witness, qi_check


class CertifyError(ValueError):
    """Raised on malformed certificates or failed constructions."""


# -- certificates and verification ------------------------------------------


@dataclass(frozen=True)
class ANCertificate:
    """(n, C, r0, per-r covers) claiming dimension <= n on a window."""

    n: int
    C: float
    r0: float
    entries: tuple              # ((r, Cover), ...)
    window: MetricWindow
    construction: str = ""
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def pid(i):
            p = self.window.ids[i]
            return list(p) if isinstance(p, tuple) else p

        return {
            "schema_version": 1,
            "n": self.n, "C": self.C, "r0": self.r0,
            "construction": self.construction,
            "metadata": self.metadata,
            "window": self.window.recipe,
            "entries": [{"r": r, "members": [sorted(pid(i) for i in m)
                                             for m in cov.members]}
                        for r, cov in self.entries],
        }


@dataclass(frozen=True)
class EntryCheck:
    r: float
    mesh: float
    mesh_ok: bool
    mult: int
    mult_ok: bool
    lebesgue_ok: bool
    lebesgue_fail_point: object
    ball_max: int
    ball_ok: bool

    @property
    def passed(self) -> bool:
        return self.mesh_ok and self.mult_ok and self.lebesgue_ok and self.ball_ok

    def to_json(self) -> dict:
        return {"r": self.r, "mesh": self.mesh, "mesh_ok": self.mesh_ok,
                "mult": self.mult, "mult_ok": self.mult_ok,
                "lebesgue_ok": self.lebesgue_ok,
                "lebesgue_fail_point": self.lebesgue_fail_point,
                "ball_max": self.ball_max, "ball_ok": self.ball_ok,
                "passed": self.passed}


@dataclass(frozen=True)
class VerifyReport:
    n: int
    C: float
    r0: float
    entries: tuple
    passed: bool

    def to_json(self) -> dict:
        return {"schema_version": 1, "n": self.n, "C": self.C, "r0": self.r0,
                "passed": self.passed,
                "entries": [e.to_json() for e in self.entries]}


def check_cover_at(w: MetricWindow, cover: Cover, n: int, C: float, r: float,
                   ball_check: bool = True) -> EntryCheck:
    """The per-entry checks; the three core inequalities plus ball-meeting."""
    m = mesh(cover)
    mesh_ok = m <= C * r + TOL
    mu = multiplicity(cover)
    mult_ok = mu <= n + 1
    leb_ok, bad = lebesgue_exceeds(cover, r)
    fail_point = None if bad is None else (
        list(w.ids[bad]) if isinstance(w.ids[bad], tuple) else w.ids[bad])
    ball_max, ball_ok = 0, True
    if ball_check:
        ball_max = _max_ball_meeting(w, cover, r)
        ball_ok = ball_max <= n + 1
    return EntryCheck(float(r), float(m), bool(mesh_ok), int(mu), bool(mult_ok),
                      bool(leb_ok), fail_point, int(ball_max), bool(ball_ok))


def _max_ball_meeting(w: MetricWindow, cover: Cover, r: float) -> int:
    """max over x of the number of members met by the open ball B_r(x)."""
    owners = cover.point_members()
    best = 0
    for i in range(w.n_points):
        ball = w.exact_ball(i, r - 1e-9) if r > TOL else np.array([i])
        met = set()
        for j in ball:
            met.update(owners[int(j)])
        if len(met) > best:
            best = len(met)
    return best


def verify(cert: ANCertificate, ball_check: bool = True) -> VerifyReport:
    """Check every entry of a certificate at its stated scale."""
    if not cert.entries:
        raise CertifyError("certificate has no entries")
    rim = cert.window.rim
    for r, _ in cert.entries:
        if r < cert.r0 - TOL or r > max(rim, cert.r0) + TOL:
            raise CertifyError(f"entry scale {r} outside [r0, rim] = "
                               f"[{cert.r0}, {rim}]")
    checks = tuple(check_cover_at(cert.window, cov, cert.n, cert.C, r,
                                  ball_check=ball_check)
                   for r, cov in cert.entries)
    return VerifyReport(cert.n, cert.C, cert.r0, checks,
                        all(c.passed for c in checks))


# -- staggered brick covers ----------------------------------------------------


def _integer_coords(w: MetricWindow) -> np.ndarray:
    if w.coords is None:
        raise CertifyError("brick covers need a coordinate window")
    coords = w.coords
    if not np.allclose(coords, np.round(coords)):
        raise CertifyError("brick covers need integer grid coordinates")
    return np.round(coords).astype(int)


def brick_params(d: int, r: float) -> dict:
    """Shared geometry of the staggered brick construction at scale r.

    m is the guaranteed deep-containment margin (> r), g the shrink gap
    making same-class members more than 2r apart, and p the tile period;
    the d+1 classes are shifted diagonally by one spacing each.
    """
    m = int(math.floor(r)) + 1
    g = int(math.floor(r)) + 1
    spacing = 2 * g + 2 * m + 1
    return {"m": m, "g": g, "spacing": spacing, "p": (d + 1) * spacing}


def brick_cover_with_classes(d: int, r: float, w: MetricWindow,
                             offset: int = 0) -> tuple:
    """d+1 staggered classes of shrunk boxes covering a Z^d window.

    Every point sits at least m > r deep inside some member, same-class
    members are r-disjoint (gap 2g+1 > 2r, so an open r-ball meets at most
    one member per class), and the construction is verified downstream,
    never trusted.  Returns (cover, class label per member).
    """
    if r < 1:
        raise CertifyError("brick scale r must be >= 1")
    coords = _integer_coords(w)
    if coords.shape[1] != d:
        raise CertifyError(f"window dimension {coords.shape[1]} != {d}")
    par = brick_params(d, r)
    p, g, spacing = par["p"], par["g"], par["spacing"]
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    members, labels = [], []
    for c in range(d + 1):
        o = c * spacing + offset
        ranges = [range((lo[j] - o - p) // p, (hi[j] - o) // p + 2)
                  for j in range(d)]
        for k in itertools.product(*ranges):
            sel = np.ones(len(coords), dtype=bool)
            for j in range(d):
                a = o + k[j] * p + g
                b = o + k[j] * p + p - 1 - g
                sel &= (coords[:, j] >= a) & (coords[:, j] <= b)
            if sel.any():
                members.append(frozenset(np.flatnonzero(sel).tolist()))
                labels.append(c)
    return Cover(w, tuple(members)), tuple(labels)


def brick_cover(d: int, r: float, w: MetricWindow, offset: int = 0) -> Cover:
    return brick_cover_with_classes(d, r, w, offset)[0]


def brick_certificate(w: MetricWindow, d: int, r0: float = 1.0,
                      max_entries: int = 8) -> ANCertificate:
    """A verified certificate from brick covers on a geometric r grid."""
    entries = []
    r = r0
    while len(entries) < max_entries:
        par = brick_params(d, r)
        if par["p"] > 4 * w.radius or r > w.rim:
            break
        cov = brick_cover(d, r, w)
        entries.append((float(r), cov))
        r *= 2.0
    if not entries:
        raise CertifyError(f"window radius {w.radius} cannot host bricks "
                           f"at r0 = {r0}")
    C = max(mesh(cov) / r for r, cov in entries)
    cert = ANCertificate(n=d, C=float(C), r0=float(entries[0][0]),
                         entries=tuple(entries), window=w,
                         construction="staggered-bricks",
                         metadata={"product_metric": "l2-product"})
    report = verify(cert)
    if not report.passed:
        raise CertifyError("brick construction failed its own verification")
    return cert


# -- greedy constructive search --------------------------------------------------


@dataclass(frozen=True)
class GreedySearchFailure:
    """Evidence (not proof) that no cover was found at (n, C, r)."""

    n: int
    C: float
    r: float
    seed: int
    iterations: int
    best_multiplicity: int | None
    attempts: tuple

    def to_json(self) -> dict:
        return {"schema_version": 1, "n": self.n, "C": self.C, "r": self.r,
                "seed": self.seed, "iterations": self.iterations,
                "best_multiplicity": self.best_multiplicity,
                "attempts": [list(a) for a in self.attempts]}


def _diagonal_brick_candidate(w, coords, k_classes, r, g, jitter, offset):
    d = coords.shape[1]
    m = int(math.floor(r)) + 1
    spacing = 2 * g + 2 * m + 1 + jitter
    p = k_classes * spacing
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    members = []
    for c in range(k_classes):
        o = c * spacing + offset
        ranges = [range((lo[j] - o - p) // p, (hi[j] - o) // p + 2)
                  for j in range(d)]
        for k in itertools.product(*ranges):
            sel = np.ones(len(coords), dtype=bool)
            for j in range(d):
                a = o + k[j] * p + g
                b = o + k[j] * p + p - 1 - g
                sel &= (coords[:, j] >= a) & (coords[:, j] <= b)
            if sel.any():
                members.append(frozenset(np.flatnonzero(sel).tolist()))
    return members


def _wall_candidate(w, coords, r, v, h, offset):
    """Brick-wall boxes on the first two axes, fattened by floor(r)."""
    t = int(math.floor(r))
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    members = []
    x, y = coords[:, 0], coords[:, 1]
    for krow in range((lo[1] - offset) // h - 1, (hi[1] - offset) // h + 2):
        y0 = offset + krow * h
        shift = (v // 2) if krow % 2 else 0
        ysel = (y >= y0 - t) & (y <= y0 + h - 1 + t)
        for j in range((lo[0] - shift) // v - 1, (hi[0] - shift) // v + 2):
            x0 = shift + j * v
            sel = ysel & (x >= x0 - t) & (x <= x0 + v - 1 + t)
            if coords.shape[1] > 2:
                pass  # remaining axes span fully
            if sel.any():
                members.append(frozenset(np.flatnonzero(sel).tolist()))
    return members


def _slab_candidate(w, coords, axis, r, width, offset):
    t = int(math.floor(r))
    lo, hi = coords.min(axis=0)[axis], coords.max(axis=0)[axis]
    x = coords[:, axis]
    members = []
    for k in range((lo - offset) // width - 1, (hi - offset) // width + 2):
        a = offset + k * width
        sel = (x >= a - t) & (x <= a + width - 1 + t)
        if sel.any():
            members.append(frozenset(np.flatnonzero(sel).tolist()))
    return members


def _ball_candidate(w, r, C, rng):
    rho = max(C * r / 2.0 - TOL, 1.0)
    order = rng.permutation(w.n_points)
    covered = np.zeros(w.n_points, dtype=bool)
    members = []
    for i in order:
        if not covered[i]:
            ball = w.exact_ball(int(i), rho)
            covered[ball] = True
            members.append(frozenset(ball.tolist()))
    return members


def greedy_search(w: MetricWindow, n: int, C: float, r: float, seed: int,
                  max_iter: int = 24):
    """Seeded constructive search for a cover passing the three core checks.

    Returns the first verified :class:`Cover`, or a
    :class:`GreedySearchFailure` describing the exhausted attempts.  Success
    is monotone in n and in C: every candidate tried at (n, C) is also tried
    at (n+1, C) and found acceptable at any larger C.
    """
    if n < 0:
        raise CertifyError("n must be >= 0")
    rng = np.random.default_rng(seed)
    coords = None
    if w.coords is not None and np.allclose(w.coords, np.round(w.coords)):
        coords = np.round(w.coords).astype(int)
    candidates = []

    def add(kind, builder):
        if len(candidates) < max_iter:
            candidates.append((kind, builder))

    add("single", lambda: [frozenset(range(w.n_points))])
    if coords is not None:
        d = coords.shape[1]
        m = int(math.floor(r)) + 1
        for k_classes in range(min(d + 1, n + 1), 0, -1):
            for g in (1, int(math.floor(r / 2)) + 1, int(math.floor(r)) + 1):
                jitter = int(rng.integers(0, max(1, m // 2) + 1))
                offset = int(rng.integers(0, 2 * m + 1))
                add(f"bricks-k{k_classes}-g{g}",
                    lambda k=k_classes, gg=g, jj=jitter, oo=offset:
                    _diagonal_brick_candidate(w, coords, k, r, gg, jj, oo))
        if d >= 2 and n + 1 >= 3:
            t = int(math.floor(r))
            for (v, h) in ((8 * t + 8, 6 * t + 6), (8 * t + 4, 4 * t + 4),
                           (6 * t + 6, 6 * t + 6)):
                offset = int(rng.integers(0, h))
                add(f"wall-{v}x{h}",
                    lambda vv=v, hh=h, oo=offset:
                    _wall_candidate(w, coords, r, vv, hh, oo))
        if n + 1 >= 2:
            for axis in range(d):
                width = max(2 * (int(math.floor(r)) + 1), 2)
                offset = int(rng.integers(0, width))
                add(f"slab-axis{axis}",
                    lambda ax=axis, ww=width, oo=offset:
                    _slab_candidate(w, coords, ax, r, ww, oo))
    add("greedy-balls", lambda: _ball_candidate(w, r, C, rng))

    attempts = []
    best_mult = None
    for kind, builder in candidates:
        try:
            members = builder()
            cov = Cover(w, tuple(members))
        except (CoverError, CertifyError):
            attempts.append((kind, "not-a-cover"))
            continue
        chk = check_cover_at(w, cov, n, C, r, ball_check=False)
        if chk.passed:
            return cov
        attempts.append((kind, f"mesh={chk.mesh:.3g}:{chk.mesh_ok} "
                               f"mult={chk.mult}:{chk.mult_ok} "
                               f"leb={chk.lebesgue_ok}"))
        if chk.mesh_ok and chk.lebesgue_ok and not chk.mult_ok:
            best_mult = chk.mult if best_mult is None else min(best_mult, chk.mult)
    return GreedySearchFailure(n, C, r, seed, len(attempts), best_mult,
                               tuple(attempts))


# -- product certificates ----------------------------------------------------------


def _greedy_coloring(cover: Cover) -> list:
    masks = cover.masks()
    k = len(cover)
    colors = [-1] * k
    for a in range(k):
        used = {colors[b] for b in range(a)
                if colors[b] >= 0 and (masks[a] & masks[b]).any()}
        c = 0
        while c in used:
            c += 1
        colors[a] = c
    return colors


def product_certificate(cert_X: ANCertificate,
                        w_prod: MetricWindow) -> ANCertificate:
    """Combine each base cover with staggered line tilings, one phase per
    color class of the base cover, so at most one slot doubles per point.

    The product window must be the product-with-line window over the base
    certificate's window.  Verification arbitrates; a failing entry is a
    construction bug and raises.
    """
    base = cert_X.window
    if w_prod.metric != "product":
        raise CertifyError("product certificate needs a product-with-line window")
    base_index = {}
    s_values = sorted({pid[1] for pid in w_prod.ids})
    prod_lookup = {pid: i for i, pid in enumerate(w_prod.ids)}
    for pid in w_prod.ids:
        base_index.setdefault(pid[0], []).append(pid)
    for bid in base.ids:
        if bid not in base_index:
            raise CertifyError(f"product window misses base point {bid!r}")
    entries = []
    for r, cov in cert_X.entries:
        colors = _greedy_coloring(cov)
        chi = max(colors) + 1
        t = int(math.floor(r))
        p = chi * (2 * t + 2)
        members = []
        s_lo, s_hi = s_values[0], s_values[-1]
        for k_mem, member in enumerate(cov.members):
            c = colors[k_mem]
            phase = c * (2 * t + 2)
            base_ids = [base.ids[i] for i in member]
            for k in range((s_lo - phase) // p - 1, (s_hi - phase) // p + 2):
                a, b = phase + k * p - t, phase + k * p + p - 1 + t
                cell = [prod_lookup[(bid, s)] for bid in base_ids
                        for s in range(max(a, s_lo), min(b, s_hi) + 1)
                        if (bid, s) in prod_lookup]
                if cell:
                    members.append(frozenset(cell))
        entries.append((float(r), Cover(w_prod, tuple(members))))
    n_prod = cert_X.n + 1
    C = max(mesh(cov) / r for r, cov in entries)
    cert = ANCertificate(n=n_prod, C=float(C), r0=float(entries[0][0]),
                         entries=tuple(entries), window=w_prod,
                         construction="product-staggered",
                         metadata={"product_metric": "l2-product",
                                   "base_construction": cert_X.construction})
    report = verify(cert, ball_check=False)
    if not report.passed:
        failing = [e.to_json() for e in report.entries if not e.passed]
        raise CertifyError(f"product construction failed verification: {failing}")
    return cert


# -- the parabolic worked example -----------------------------------------------------


def parabolic_window(radius: int) -> MetricWindow:
    return build({"kind": "parabolic", "params": {"xmax": int(radius)}})


def parabolic_relations(w: MetricWindow):
    """Flattening projection onto the spine and its inverse (the inclusion)."""
    pairs = [((x, 0), (x, y)) for (x, y) in w.ids]
    proj = Relation.from_id_pairs(w, pairs)
    return proj, proj.inverse()


def parabolic_demo(radius: int, seeds=(0, 1, 2), search_r: float = 1.0,
                   search_C: float = 14.0, ladder=(1, 2, 4)) -> dict:
    """The parabolic region report: decaying control profiles, dimension-two
    search evidence, and stability across a 2x / 4x radius ladder."""
    if radius < 16:
        raise CertifyError("parabolic demo needs radius >= 16")
    rungs = []
    for factor in ladder:
        R = radius * factor
        w = parabolic_window(R)
        proj, inj = parabolic_relations(w)
        grid = np.arange(16.0, 0.92 * w.radius, 4.0)
        prof_proj = control_profile(proj, w, r_grid=grid)
        prof_inj = control_profile(inj, w, r_grid=grid)
        profile_rows = []
        bound_ok = True
        for (rr, f, b), (_, f2, b2) in zip(prof_proj.samples, prof_inj.samples):
            cap = 2.0 / math.sqrt(rr)
            row_ok = max(f, b, f2, b2) <= cap + TOL
            bound_ok = bound_ok and row_ok
            profile_rows.append({"r": rr, "proj_fwd": f, "proj_bwd": b,
                                 "inj_fwd": f2, "inj_bwd": b2,
                                 "cap": cap, "ok": row_ok})
        n1 = {}
        for seed in seeds:
            out = greedy_search(w, 1, search_C, search_r, seed)
            n1[seed] = isinstance(out, Cover)
        n2_out = greedy_search(w, 2, search_C, search_r, seeds[0])
        n2_ok = isinstance(n2_out, Cover)
        rungs.append({
            "radius": R,
            "n_points": w.n_points,
            "profile": profile_rows,
            "profiles_bounded": bool(bound_ok),
            "n1_success_by_seed": n1,
            "n1_all_fail": not any(n1.values()),
            "n2_success": n2_ok,
        })
    stable = all(r["n1_all_fail"] and r["n2_success"] and r["profiles_bounded"]
                 for r in rungs)
    return {
        "schema_version": 1,
        "radius": radius,
        "search": {"r": search_r, "C": search_C, "seeds": list(seeds)},
        "rungs": rungs,
        "ladder_stable": bool(stable),
    }


# -- cone slice maps -----------------------------------------------------------------


def cone_slice_map(w_prod: MetricWindow, t: float,
                   off_slice_sets=None) -> dict:
    """Embed the base window along the slope-tan(t) slice of the product and
    measure the quasi-isometry constants of the embedding.

    Also evaluates, for each supplied off-slice set, the measured slope of
    |s - ||y|| tan t| against ||(y, s)||.
    """
    if not (0.0 <= t <= math.pi / 4 + TOL):
        raise CertifyError("slice angle t must lie in [0, pi/4]")
    if w_prod.metric != "product" or w_prod.recipe is None:
        raise CertifyError("cone slices need a product-with-line window")
    base = build(w_prod.recipe["params"]["base"])
    tan_t = math.tan(t)
    s_values = sorted({pid[1] for pid in w_prod.ids})
    s_lo, s_hi = s_values[0], s_values[-1]
    prod_lookup = {pid: i for i, pid in enumerate(w_prod.ids)}
    slice_ids = []
    for bid in base.ids:
        s = int(round(base.norm(base.index(bid)) * tan_t))
        s = min(max(s, s_lo), s_hi)
        slice_ids.append((bid, s))
    slice_coords = np.array([w_prod.coords[prod_lookup[p]] for p in slice_ids])
    w_slice = MetricWindow(ids=tuple(slice_ids), metric="product",
                           basepoint=slice_ids.index(
                               (base.ids[base.basepoint],
                                slice_ids[base.basepoint][1])),
                           coords=slice_coords, base_dim=w_prod.base_dim,
                           base_metric=w_prod.base_metric)
    f_idx = np.arange(len(slice_ids), dtype=np.intp)
    lam = 1.0 / math.cos(t) + 1e-9
    rep = qi_check(f_idx, base, w_slice, lam, 2.0, 1.0)
    out = {
        "schema_version": 1,
        "t": t, "tan_t": tan_t,
        "qi": rep.to_json(),
        "slice_points": [list(p[0]) if isinstance(p[0], tuple) else p[0]
                         for p in slice_ids],
        "off_slice": [],
    }
    if off_slice_sets:
        for name, pts in off_slice_sets.items():
            idx = w_prod.indices_of(pts)
            ys = w_prod.coords[idx]
            base_norm = np.array([base.norm(base.index(w_prod.ids[i][0]))
                                  for i in idx])
            s = ys[:, -1]
            gaps = np.abs(s - base_norm * tan_t)
            norms = w_prod.norms[idx]
            keep = norms > TOL
            slope = float((gaps[keep] / norms[keep]).min()) if keep.any() else 0.0
            out["off_slice"].append({"name": name, "min_slope": slope})
    return out


def slice_trace(w_prod: MetricWindow, t: float) -> np.ndarray:
    """Indices of the nearest-window slice {(x, ||x|| tan t)}."""
    base = build(w_prod.recipe["params"]["base"])
    tan_t = math.tan(t)
    s_values = sorted({pid[1] for pid in w_prod.ids})
    out = []
    for bid in base.ids:
        s = int(round(base.norm(base.index(bid)) * tan_t))
        s = min(max(s, s_values[0]), s_values[-1])
        out.append(w_prod.index((bid, s)))
    return np.unique(np.array(out, dtype=np.intp))
