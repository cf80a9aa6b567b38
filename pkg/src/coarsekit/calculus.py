"""The cover-combination calculus: star merges and telescope refinements.

``star_merge`` splices a fine cover into a coarse one across a key region K:
fine members inside K are kept verbatim, while each coarse member V is
rebuilt as V' = [V minus K] together with every fine member assigned to it.
``telescope`` iterates the merge along a geometric scale ladder
r_{i+1} = (C/D) r_i, realizes the stabilized cover, restricts it away from
the core ball, groups by a target cover, and checks the resulting Lebesgue
slope D^2/(3 C^2) pointwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import TOL, MetricWindow
from .covers import (Cover, SetFamily, lebesgue_number, lebesgue_values,
                     linearity_witness, mesh, multiplicity)


class CalculusError(ValueError):
    """Raised on failed preconditions or broken merge invariants."""


# -- star merge ---------------------------------------------------------------


@dataclass(frozen=True)
class MergeResult:
    merged: Cover
    origin: tuple        # per merged member: ("kept", u_index) | ("rebuilt", v_index)
    choice: dict         # fine member index -> coarse member index it refines

    def to_json(self) -> dict:
        return {"schema_version": 1,
                "origin": [list(o) for o in self.origin],
                "choice": {str(k): v for k, v in sorted(self.choice.items())},
                "n_members": len(self.merged)}


def _refinement_choice(fine: Cover, coarse: Cover) -> dict:
    """Lowest-index coarse member containing each fine member; rejects
    non-refinements naming the offending member."""
    owners = coarse.point_members()
    choice = {}
    for k, u in enumerate(fine.members):
        probe = next(iter(u))
        found = None
        for v_idx in owners[probe]:
            if u <= coarse.members[v_idx]:
                found = v_idx if found is None else min(found, v_idx)
        if found is None:
            # the probe point's members missed; scan the rest exhaustively
            for v_idx, v in enumerate(coarse.members):
                if u <= v:
                    found = v_idx
                    break
        if found is None:
            raise CalculusError(
                f"refinement precondition fails: fine member {k} "
                f"(size {len(u)}) lies in no coarse member")
        choice[k] = found
    return choice


def star_merge(fine: Cover, coarse: Cover, key) -> MergeResult:
    """Merge a refining cover into a coarse one across the key set.

    All the merge guarantees are asserted after construction: the result
    covers the window, its multiplicity stays below both inputs', it refines
    the coarse cover and is refined by the fine one, members inside the key
    are fine members verbatim, and coarse members missing the key survive
    unchanged.
    """
    w = fine.window
    if coarse.window is not w:
        raise CalculusError("covers live on different windows")
    key_mask = np.zeros(w.n_points, dtype=bool)
    key_idx = np.asarray(list(key), dtype=np.intp) if not isinstance(key, np.ndarray) else key
    key_mask[key_idx] = True
    choice = _refinement_choice(fine, coarse)

    def meets_outside(member):
        return any(not key_mask[i] for i in member)

    kept, origin, members = [], [], []
    for k, u in enumerate(fine.members):
        if all(key_mask[i] for i in u):
            members.append(u)
            origin.append(("kept", k))
    outside_fine = {k: u for k, u in enumerate(fine.members) if meets_outside(u)}
    for v_idx, v in enumerate(coarse.members):
        if not meets_outside(v):
            continue
        rebuilt = frozenset(i for i in v if not key_mask[i])
        for k, u in outside_fine.items():
            if choice[k] == v_idx:
                rebuilt |= u
        members.append(rebuilt)
        origin.append(("rebuilt", v_idx))
    merged = Cover(w, tuple(members))  # raises if the union misses a point
    result = MergeResult(merged, tuple(origin), choice)
    _assert_merge_invariants(fine, coarse, key_mask, result)
    return result


def _assert_merge_invariants(fine: Cover, coarse: Cover, key_mask, result):
    merged = result.merged
    mu = multiplicity(merged)
    cap = max(multiplicity(fine), multiplicity(coarse))
    if mu > cap:
        raise CalculusError(f"merged multiplicity {mu} exceeds max of inputs {cap}")
    for wmem in merged.members:
        if not any(wmem <= v for v in coarse.members):
            raise CalculusError("merged cover does not refine the coarse cover")
    for u in fine.members:
        if not any(u <= wmem for wmem in merged.members):
            raise CalculusError("fine cover does not refine the merged cover")
    for wmem, o in zip(merged.members, result.origin):
        if all(key_mask[i] for i in wmem) and wmem not in fine.members:
            raise CalculusError("a member inside the key is not a fine member")
    for v in coarse.members:
        if not any(key_mask[i] for i in v) and v not in merged.members:
            raise CalculusError("a coarse member missing the key was dropped")


# -- telescope -----------------------------------------------------------------


@dataclass(frozen=True)
class TelescopeResult:
    stages: tuple               # covers V_1..V_T
    liminf_cover: Cover
    restricted: SetFamily       # members meeting the outside of B(r_2)
    grouped: SetFamily          # restricted members unioned per target member
    params: dict
    assignment: dict            # restricted member index -> target member index

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "params": self.params,
            "stage_stats": [{"members": len(s), "mesh": mesh(s),
                             "multiplicity": multiplicity(s)}
                            for s in self.stages],
            "grouped_members": None if self.grouped is None else len(self.grouped),
            "assignment": {str(k): v for k, v in sorted(self.assignment.items())},
        }


def telescope(target: Cover, ladder, C: float, D: float, r0: float,
              n: int | None = None) -> TelescopeResult:
    """Run the scale-ladder merge against a target cover.

    The ladder supplies one cover per rung r_i = (C/D)^i r0 (i >= 1); each
    rung must have multiplicity <= n+1, Lebesgue number > r_i and mesh below
    the next rung (mesh < (C/D) r_i, the bound every internal step actually
    consumes; see the recorded mesh slopes for the measured constants).  The
    target needs a Lebesgue linearity slope >= D.

    Stages run up to the largest index whose key ball stays inside the rim;
    a ladder shorter than that yields a partial, flagged result.  The final
    grouped cover is checked pointwise for the Lebesgue slope D^2/(3 C^2) on
    the annulus [3 r_2, rim], and both scale-propagation facts are asserted
    stage by stage.
    """
    if not (C > 1.0 > D > 0.0):
        raise CalculusError("need C > 1 > D > 0")
    if r0 <= 0:
        raise CalculusError("r0 must be positive")
    w = target.window
    ratio = C / D
    rim = w.rim

    def r(i: int) -> float:
        return (ratio ** i) * r0

    # stages 1..T with T the largest i such that 2 r_{i+2} <= rim, and at
    # least the degenerate single stage
    t_stop = 1
    while 2.0 * r(t_stop + 3) <= rim + TOL:
        t_stop += 1
    partial = False
    ladder = list(ladder)
    if len(ladder) < t_stop:
        t_stop = len(ladder)
        partial = True
    if t_stop == 0:
        raise CalculusError("empty ladder")

    if n is None:
        n = max(multiplicity(cov) for cov in ladder[:t_stop]) - 1
    mesh_slopes = []
    for i in range(1, t_stop + 1):
        cov = ladder[i - 1]
        if cov.window is not w:
            raise CalculusError(f"ladder rung {i} lives on a different window")
        mu = multiplicity(cov)
        if mu > n + 1:
            raise CalculusError(f"rung {i}: multiplicity {mu} > n+1 = {n + 1}")
        m = mesh(cov)
        mesh_slopes.append(m / r(i))
        if m >= ratio * r(i) - TOL:
            raise CalculusError(
                f"rung {i}: mesh {m:.6g} does not fit under the next scale "
                f"(C/D) r_{i} = {ratio * r(i):.6g}")
        L = lebesgue_number(cov)
        if L <= r(i) + TOL:
            raise CalculusError(f"rung {i}: Lebesgue number {L:.6g} <= r_{i} "
                                f"= {r(i):.6g}")
    target_wit = linearity_witness(lebesgue_values(target), w,
                                   threshold=0.0, r_hi=rim)
    if target_wit.c < D - TOL:
        raise CalculusError(f"target Lebesgue slope {target_wit.c:.6g} below "
                            f"D = {D}")

    stages = [ladder[0]]
    for i in range(1, t_stop):
        key = w.closed_ball(2.0 * r(i + 2))
        stages.append(star_merge(stages[-1], ladder[i], key).merged)

    # liminf over the realized stages: members present from some stage on
    union = []
    seen = set()
    for s in range(t_stop):
        tail = set(stages[s].members)
        for t in range(s + 1, t_stop):
            tail &= set(stages[t].members)
        for m in stages[s].members:
            if m in tail and m not in seen:
                union.append(m)
                seen.add(m)
    liminf_cover = Cover(w, tuple(union))

    _assert_propagation(stages, liminf_cover, w, r, t_stop)
    for s in stages:
        for m in s.members:
            if not any(m <= v for v in liminf_cover.members):
                raise CalculusError("a stage does not refine the stabilized cover")
    mu_lim = multiplicity(liminf_cover)
    if mu_lim > n + 1:
        raise CalculusError(f"stabilized multiplicity {mu_lim} > n+1")

    outside = ~np.isin(np.arange(w.n_points), w.closed_ball(r(2)))
    restricted_members = tuple(m for m in liminf_cover.members
                               if any(outside[i] for i in m))
    restricted = SetFamily(w, restricted_members)

    assignment = {}
    owners = target.point_members()
    for k, m in enumerate(restricted_members):
        probe = next(iter(m))
        found = None
        for v_idx in owners[probe]:
            if m <= target.members[v_idx]:
                found = v_idx if found is None else min(found, v_idx)
        if found is None:
            for v_idx, v in enumerate(target.members):
                if m <= v:
                    found = v_idx
                    break
        if found is None:
            raise CalculusError(
                f"restricted member {k} refines no target member")
        assignment[k] = found
    groups = {}
    for k, v_idx in assignment.items():
        groups.setdefault(v_idx, set()).update(restricted_members[k])
    grouped_members = tuple(frozenset(pts) for _, pts in sorted(groups.items()))
    grouped = SetFamily(w, grouped_members)
    mu_grouped = max((sum(1 for m in grouped_members if i in m)
                      for i in range(w.n_points)), default=0)
    if mu_grouped > n + 1:
        raise CalculusError(f"grouped multiplicity {mu_grouped} > n+1")
    for m, v_idx in zip(grouped_members, sorted(groups)):
        if not m <= target.members[v_idx]:
            raise CalculusError("grouped member escapes its target member")

    if not _covers_region(restricted_members, outside, w):
        raise CalculusError("restricted family misses part of the outer region")

    slope = D * D / (3.0 * C * C)
    # the ladder guarantees the slope out to 3 r_{T+2}; a well-phased full
    # ladder reaches past the rim, a short one scopes the assertion honestly
    lo, hi = 3.0 * r(2), min(rim, 3.0 * r(t_stop + 2))
    check_points = w.annulus(lo, hi) if lo <= hi else np.array([], dtype=np.intp)
    if check_points.size:
        values = lebesgue_values(grouped)
        need = slope * w.norms[check_points]
        bad = check_points[values[check_points] <= need + TOL]
        if bad.size:
            i = int(bad[0])
            raise CalculusError(
                f"grouped Lebesgue slope fails at {w.ids[i]!r}: "
                f"{values[i]:.6g} <= {slope:.6g} * {w.norm(i):.6g}")

    params = {
        "C": C, "D": D, "r0": r0, "n": n, "stop_index": t_stop,
        "partial": partial,
        "r_ladder": [r(i) for i in range(1, t_stop + 3)],
        "mesh_slopes": mesh_slopes,
        "target_slope": target_wit.c,
        "final_slope_bound": slope,
        "annulus": [lo, hi],
        "annulus_truncated": bool(hi < rim - TOL),
        "checked_points": int(check_points.size),
    }
    return TelescopeResult(tuple(stages), liminf_cover, restricted, grouped,
                           params, assignment)


def _covers_region(members, region_mask, w):
    covered = np.zeros(w.n_points, dtype=bool)
    for m in members:
        covered[list(m)] = True
    return bool(covered[region_mask].all())


def _assert_propagation(stages, liminf_cover, w, r, t_stop):
    """The two scale-propagation facts, asserted for every realized stage."""
    for i in range(1, t_stop):            # V_i and V_{i+1} both realized
        ball = w.closed_ball(r(i + 2))
        ball_set = set(ball.tolist())
        nxt = set(stages[i].members)
        for m in stages[i - 1].members:
            if any(j in ball_set for j in m) and m not in nxt:
                raise CalculusError(
                    f"membership persistence fails from stage {i} to {i + 1}")
    lim = set(liminf_cover.members)
    for i in range(2, t_stop + 1):        # V in liminf meeting B(r_{i+1})
        ball_set = set(w.closed_ball(r(i + 1)).tolist())
        prev = set(stages[i - 2].members)
        for m in lim:
            if any(j in ball_set for j in m) and m not in prev:
                raise CalculusError(
                    f"backward propagation fails into stage {i - 1}")
