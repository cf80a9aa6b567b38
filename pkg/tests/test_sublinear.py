"""Control profiles, witnesses, and the function algebra bounds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarsekit.space import build
from coarsekit.covers import linearity_witness
from coarsekit.sublinear import (ControlProfile, Relation, SublinearError,
                                 blend_extension, control_profile,
                                 divergence_to_separation, divergence_witness,
                                 gap_profile, hat_extension,
                                 linear_neighborhood_check, qi_check,
                                 radial_retraction, ratio_blend,
                                 separation_to_divergence, separation_valid,
                                 separation_witness, simplex_boundary_extension,
                                 two_set_divergence_valid, urysohn_phi,
                                 variation_seminorm)


def ray_window(length):
    return build({"kind": "cloud",
                  "params": {"points": [[float(x)] for x in range(length + 1)],
                             "metric": "l1", "basepoint": [0.0]}})


def line_window(radius):
    return build({"kind": "cayley",
                  "params": {"group": "Z^d", "d": 1, "radius": radius}})


@pytest.fixture(scope="module")
def parabola():
    return build({"kind": "parabolic", "params": {"xmax": 100}})


# -- control profiles ----------------------------------------------------------


def test_diagonal_profile_is_zero():
    w = ray_window(30)
    prof = control_profile(Relation.diagonal(w), w)
    assert all(f == 0 and b == 0 for _, f, b in prof.samples)


def test_doubling_relation_not_controlled():
    w = ray_window(60)
    pairs = [((2 * x,), (x,)) for x in range(1, 31)]
    E = Relation.from_id_pairs(w, pairs)
    prof = control_profile(E, w, r_grid=np.arange(1.0, 31.0))
    for r, f, _ in prof.samples:
        assert f == pytest.approx(1.0)  # d(2x, x)/|x| = 1 on every annulus


def test_parabolic_projection_profile_decays(parabola):
    w = parabola
    pairs = [(((x, 0)), ((x, y))) for (x, y) in w.ids]
    E = Relation.from_id_pairs(w, pairs)
    grid = np.arange(4.0, 90.0, 5.0)
    prof = control_profile(E, w, r_grid=grid)
    for r, f, b in prof.samples:
        closed_form = 1.0 / math.sqrt(max(r - 1.0, 1.0))
        assert f <= closed_form + 1e-9
        assert b <= 2.0 / math.sqrt(r)
    # monotone nonincreasing in r
    fs = [f for _, f, _ in prof.samples]
    assert all(a >= b - 1e-12 for a, b in zip(fs[:-1], fs[1:]))


def test_profile_basepoint_robustness():
    w0 = ray_window(200)
    pts = [[float(x)] for x in range(201)]
    w1 = build({"kind": "cloud", "params": {"points": pts, "metric": "l1",
                                            "basepoint": [3.0]}})
    delta = 3.0
    rng = np.random.default_rng(0)
    src = rng.integers(20, 200, size=60)
    tgt = np.clip(src + rng.integers(-4, 5, size=60), 0, 200)
    E0 = Relation(w0, w0.indices_of([(float(t),) for t in tgt]),
                  w0.indices_of([(float(s),) for s in src]))
    E1 = Relation(w1, w1.indices_of([(float(t),) for t in tgt]),
                  w1.indices_of([(float(s),) for s in src]))
    for r in (15.0, 30.0, 60.0, 120.0):
        e0 = control_profile(E0, w0, r_grid=[r - delta]).eps_forward(r - delta)
        e1 = control_profile(E1, w1, r_grid=[r]).eps_forward(r)
        assert e1 <= e0 * (r + delta) / (r - delta) + 1e-9


# -- divergence witnesses --------------------------------------------------------


def test_divergence_whole_window_invalid():
    w = ray_window(40)
    wit = divergence_witness([np.arange(w.n_points)], w)
    assert not wit.valid


def test_divergence_duplicate_sets_match_single():
    w = ray_window(40)
    E = np.arange(0, 10)
    w1 = divergence_witness([E], w)
    w2 = divergence_witness([E, E], w)
    assert w1.c == w2.c and w1.r0 == w2.r0


def grid_window(R):
    pts = [[float(x), float(y)] for x in range(-R, R + 1)
           for y in range(-R, R + 1)]
    return build({"kind": "cloud", "params": {"points": pts, "metric": "l2",
                                              "basepoint": [0.0, 0.0]}})


def test_two_rays_divergence_slope():
    R = 24
    w = grid_window(R)
    theta = math.pi / 2
    ray1 = [w.index((float(k), 0.0)) for k in range(1, R + 1)]
    ray2 = [w.index((0.0, float(k))) for k in range(1, R + 1)]
    wit = divergence_witness([np.array(ray1), np.array(ray2)], w)
    assert wit.valid
    assert wit.c == pytest.approx(math.sin(theta / 2), rel=0.10)


def test_divergence_monotone_under_shrinking():
    w = ray_window(60)
    big = np.arange(0, 30)
    small = np.arange(0, 10)
    other = np.arange(45, 61)
    c_big = divergence_witness([big, other], w).c
    c_small = divergence_witness([small, other], w).c
    assert c_small >= c_big - 1e-12


# -- separation witnesses --------------------------------------------------------


def test_separation_equal_sets_invalid():
    w = ray_window(50)
    A = np.arange(10, 40)
    wit = separation_witness(A, A.copy(), w)
    assert not wit.valid and wit.D == pytest.approx(0.0, abs=1e-9)


def test_separation_opposite_rays_slope_two():
    w = line_window(60)
    A = w.indices_of([(x,) for x in range(0, 61, 2)])
    B = w.indices_of([(-x,) for x in range(1, 61)])
    wit = separation_witness(A, B, w)
    assert wit.valid
    assert 1.6 <= wit.D <= 2.2


def test_separation_validity_is_exact_piecewise():
    w = line_window(40)
    A = w.indices_of([(x,) for x in range(1, 41)])
    B = w.indices_of([(-x,) for x in range(1, 41)])
    # gap(r) = 2 ceil(r); claim D=2, r1=1 holds for all real r in [1, rim]
    ok, _ = separation_valid(A, B, w, 2.0, 1.0, r_hi=w.rim)
    assert ok
    ok, r_bad = separation_valid(A, B, w, 2.05, 1.0, r_hi=w.rim)
    assert not ok and r_bad is not None


def test_lemma_constant_round_trip_exact():
    rng = np.random.default_rng(17)
    w = grid_window(16)
    for _ in range(10):
        a_n = rng.integers(5, 40)
        b_n = rng.integers(5, 40)
        allpts = np.arange(w.n_points)
        A = rng.choice(allpts, size=a_n, replace=False)
        B = np.setdiff1d(rng.choice(allpts, size=b_n, replace=False), A)
        if B.size == 0:
            continue
        # forward: a valid divergence slope gives the same gap slope
        f = np.maximum(w.dists_to_set(A), w.dists_to_set(B))
        wit = linearity_witness(f, w, r_hi=w.radius)
        if not wit.valid:
            continue
        D, r1 = divergence_to_separation(wit.c, wit.r0)
        ok, r_bad = separation_valid(A, B, w, D, r1, r_hi=w.radius)
        assert ok, f"gap bound broke at r={r_bad}"
        # backward: a valid gap slope gives a divergence slope
        sep = separation_witness(A, B, w, r_hi=w.radius)
        if not sep.valid:
            continue
        C, r0 = separation_to_divergence(sep.D, sep.r1)
        okd, bad = two_set_divergence_valid(A, B, w, C, r0,
                                            r_hi=min(w.radius, 2 * sep.r_hi) / 1.0)
        assert okd, f"divergence bound broke at point {bad}"


# -- urysohn quotient ------------------------------------------------------------


def test_urysohn_values_on_sets():
    w = ray_window(20)
    A = np.arange(0, 5)
    B = np.arange(16, 21)
    phi, _ = urysohn_phi(A, B, w)
    assert np.allclose(phi[A], 0.0)
    assert np.allclose(phi[B], 1.0)
    assert phi[10] == pytest.approx(0.5)  # d(10,{..4}) = d(10,{16..}) = 6


def test_urysohn_partition_of_unity():
    w = grid_window(8)
    rng = np.random.default_rng(3)
    A = rng.choice(w.n_points, size=12, replace=False)
    B = np.setdiff1d(rng.choice(w.n_points, size=12, replace=False), A)
    pa, _ = urysohn_phi(A, B, w)
    pb, _ = urysohn_phi(B, A, w)
    assert np.allclose(pa + pb, 1.0)


def test_urysohn_overlapping_sets_rejected():
    w = ray_window(10)
    with pytest.raises(SublinearError, match="vanishes"):
        urysohn_phi(np.arange(0, 5), np.arange(4, 8), w)


def test_urysohn_bound_with_hypothesis_half():
    w = grid_window(20)
    A = w.indices_of([(float(k), 0.0) for k in range(1, 21)])
    B = w.indices_of([(0.0, float(k)) for k in range(1, 21)])
    phi, rep = urysohn_phi(A, B, w, hypothesis_c=0.5)
    assert rep.gap_form_ok and rep.max_form_ok
    assert rep.bound == pytest.approx(6.0)
    assert rep.measured.value <= 6.0
    assert rep.bound_holds


# -- variation seminorm ------------------------------------------------------------


def test_seminorm_constant_zero():
    w = ray_window(30)
    sn = variation_seminorm(np.full(w.n_points, 3.7), w)
    assert sn.value == 0.0


def test_seminorm_half_plane_indicator_grows_with_radius():
    vals = []
    for R in (6, 12, 24):
        w = grid_window(R)
        f = (w.coords[:, 0] > 0).astype(float)
        sn = variation_seminorm(f, w)
        vals.append(sn.value)
        # the argmax pair straddles the boundary near the rim
        i, _ = sn.argmax
        assert abs(w.coords[i, 0]) <= 1.0
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] >= 0.8 * 24  # ~ linear growth in the radius


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_seminorm_subadditive_and_product_rule(seed):
    w = ray_window(15)
    rng = np.random.default_rng(seed)
    f = rng.uniform(-1, 1, w.n_points)
    g = rng.uniform(-1, 1, w.n_points)
    sf, sg = variation_seminorm(f, w), variation_seminorm(g, w)
    s_sum = variation_seminorm(f + g, w)
    assert s_sum.value <= sf.value + sg.value + 1e-9
    s_prod = variation_seminorm(f * g, w)
    assert s_prod.value <= sf.sup_abs * sg.value + sg.sup_abs * sf.value + 1e-9


# -- linear neighborhoods -----------------------------------------------------------


def test_linear_neighborhood_whole_window():
    w = ray_window(25)
    wit = linear_neighborhood_check(np.arange(0, 5), np.arange(w.n_points), w)
    assert wit.valid and wit.D == w.sentinel


def test_linear_neighborhood_tight_dense_set_invalid():
    # W = A for a coarsely dense set: the gap stays O(1), so the measured
    # slope decays like 1/radius and dies across the ladder
    slopes = []
    for R in (50, 100, 200):
        w = ray_window(R)
        A = np.arange(0, R + 1, 2)
        wit = linear_neighborhood_check(A, A, w, threshold=0.05)
        assert not wit.valid
        slopes.append(wit.D)
    assert slopes[0] > slopes[1] > slopes[2]
    assert slopes[2] == pytest.approx(1.0 / 199, rel=0.1)


def test_linear_neighborhood_not_containing_rejected():
    w = ray_window(10)
    with pytest.raises(SublinearError, match="not contained"):
        linear_neighborhood_check(np.arange(0, 6), np.arange(3, 8), w)


def test_preimage_of_thickened_zero_set_is_linear():
    # W = g^{-1}(N_r(F)) for a finite-seminorm g and closed F = {0}
    w = grid_window(16)
    A0 = w.indices_of([(float(k), 0.0) for k in range(1, 17)])
    B0 = w.indices_of([(0.0, float(k)) for k in range(1, 17)])
    g, _ = urysohn_phi(A0, B0, w)      # finite seminorm on the window
    A = np.flatnonzero(np.abs(g) <= 1e-12)
    W = np.flatnonzero(np.abs(g) < 0.5)
    wit = linear_neighborhood_check(A, W, w)
    assert wit.valid


# -- hat / blend / ratio extensions ---------------------------------------------------


def _hat_instance(seed=0, R=14):
    w = grid_window(R)
    A = w.indices_of([(float(k), 0.0) for k in range(0, R + 1)])
    W = np.flatnonzero(np.abs(w.coords[:, 1]) <= np.abs(w.coords[:, 0]) / 2 + 1)
    rng = np.random.default_rng(seed)
    f = np.cos(w.coords[:, 0] / 5.0) + 0.1 * rng.uniform(-1, 1, w.n_points)
    return w, A, W, f


def test_hat_full_window_is_identity():
    w = ray_window(20)
    A = W = np.arange(w.n_points)
    f = np.sin(np.arange(w.n_points) / 3.0)
    fhat, rep = hat_extension(f, A, W, w)
    assert np.allclose(fhat, f)
    assert rep.c_phi == 0.0


def test_hat_of_ones_is_the_bump():
    w, A, W, _ = _hat_instance()
    ones = np.ones(w.n_points)
    fhat, rep = hat_extension(ones, A, W, w)
    assert np.allclose(fhat[A], 1.0)
    outside = np.setdiff1d(np.arange(w.n_points), W)
    assert np.allclose(fhat[outside], 0.0)
    assert rep.measured <= rep.bound + 1e-9


def test_hat_random_instances_bound_holds():
    for seed in range(4):
        w, A, W, f = _hat_instance(seed)
        fhat, rep = hat_extension(f, A, W, w)
        assert np.allclose(fhat[A], f[A])
        assert rep.measured <= rep.bound + 1e-9


def test_blend_with_fbar_equal_fhat():
    w, A, W, f = _hat_instance(1)
    fhat, _ = hat_extension(f, A, W, w)
    g, rep = blend_extension(f, fhat, A, W, 0.25, w)
    assert np.allclose(g, fhat)
    assert rep.max_deviation <= 1e-12


def test_blend_constructed_instance():
    w, A, W, f = _hat_instance(2)
    fhat, _ = hat_extension(f, A, W, w)
    bump = 0.05 * np.sin(w.coords[:, 1])
    bump[A] = 0.0
    fbar = fhat + bump
    g, rep = blend_extension(f, fbar, A, W, 0.3, w)
    assert np.max(np.abs(g - fbar)) <= 0.3 + 1e-9
    assert np.allclose(g[A], f[A])


def test_ratio_blend_edges_and_bound():
    w = ray_window(25)
    u = np.full(w.n_points, 2.0)
    v = np.zeros(w.n_points)
    vals, rep = ratio_blend(u, v, 1.0, w)
    assert np.allclose(vals, 1.0) and rep.measured == 0.0
    u2 = 1.0 + 0.3 * np.sin(w.norms / 4)
    vals2, rep2 = ratio_blend(u2, u2.copy(), 0.5, w)
    assert np.allclose(vals2, 0.5)
    rng = np.random.default_rng(5)
    u3 = 1.0 + rng.uniform(0, 1, w.n_points)
    v3 = 1.0 + rng.uniform(0, 1, w.n_points)
    _, rep3 = ratio_blend(u3, v3, 2.0, w)
    assert rep3.measured <= rep3.bound + 1e-9


def test_ratio_blend_rejects_small_sum():
    w = ray_window(10)
    u = np.zeros(w.n_points)
    v = np.zeros(w.n_points)
    v[3] = 0.1
    u[3] = 0.0
    v[0] = 1.0
    u[0] = 1.0
    with pytest.raises(SublinearError, match="delta"):
        ratio_blend(u, v, 0.5, w)


# -- simplex boundary extension ---------------------------------------------------------


def _boundary_map(w, n):
    """A continuous-ish boundary-valued map: one coordinate always zero."""
    t = (w.norms / max(w.radius, 1.0)) * 0.9
    g = np.zeros((w.n_points, n + 1))
    g[:, 0] = 1.0 - t
    g[:, 1] = t
    return [g[:, i].copy() for i in range(n + 1)]


def test_simplex_push_identity_when_unperturbed():
    w = ray_window(20)
    g = _boundary_map(w, 2)
    A = np.arange(0, 3)
    h, rep = simplex_boundary_extension([c.copy() for c in g], g, A, w)
    stacked = np.stack(g, axis=1)
    assert np.allclose(h, stacked, atol=1e-9)
    assert rep.min_abs_sum >= 2 / 3
    assert rep.min_clearance >= 1 / (2 * 3)


def test_simplex_push_segment_case_clearance():
    # n = 1: the boundary is the two endpoints, so g is vertex-valued
    w = ray_window(15)
    near = (w.norms <= 7).astype(float)
    g = [near, 1.0 - near]
    q = [g[0] * (1 + 1 / 6), g[1].copy()]
    h, rep = simplex_boundary_extension(q, g, np.array([], dtype=np.intp), w)
    assert rep.min_clearance >= 1 / 4 - 1e-9
    assert np.allclose(h.sum(axis=1), 1.0)


def test_simplex_push_random_perturbations_at_the_cap():
    w = ray_window(25)
    n = 2
    g = _boundary_map(w, n)
    rng = np.random.default_rng(9)
    cap = 1 / (3 * (n + 1))
    for _ in range(5):
        q = [np.clip(c + rng.uniform(-cap, cap, w.n_points), None, None)
             for c in g]
        h, rep = simplex_boundary_extension(q, g, np.array([], dtype=np.intp), w)
        assert rep.min_abs_sum >= 2 / 3 - 1e-9
        assert rep.min_clearance >= 1 / (2 * (n + 1)) - 1e-9
        # h lands on the boundary: min coordinate zero, sum one
        assert np.all(h.min(axis=1) <= 1e-9)
        assert np.allclose(h.sum(axis=1), 1.0)


def test_simplex_push_rejects_oversized_perturbation():
    w = ray_window(10)
    near = (w.norms <= 5).astype(float)
    g = [near, 1.0 - near]
    q = [g[0] + 0.4, g[1].copy()]
    with pytest.raises(SublinearError, match="perturbation bound"):
        simplex_boundary_extension(q, g, np.array([], dtype=np.intp), w)


def test_radial_retraction_fixes_boundary():
    z = np.array([[0.0, 0.3, 0.7], [0.5, 0.5, 0.0]])
    out = radial_retraction(z)
    assert np.allclose(out, z)


# -- quasi-isometry checks -----------------------------------------------------------


def test_qi_identity():
    w = ray_window(30)
    rep = qi_check(np.arange(w.n_points), w, w, 1.0, 0.0, 0.0,
                   E=Relation.diagonal(w))
    assert rep.is_qi and rep.density == 0.0
    assert all(ok for _, _, _, ok in rep.transport)


def test_qi_doubling_map():
    wx = line_window(30)
    wy = line_window(60)
    f_idx = np.array([wy.index((2 * x,)) for (x,) in wx.ids])
    pairs = [((x + 1,), (x,)) for x in range(-30, 30)]
    E = Relation.from_id_pairs(wx, pairs)
    rep = qi_check(f_idx, wx, wy, 2.0, 0.0, 1.0, E=E)
    assert rep.lower_ok and rep.upper_ok
    assert rep.density == 1.0 and rep.density_ok
    assert all(ok for _, _, _, ok in rep.transport)


def test_qi_parabolic_projection_fails_density_but_profiles_decay(parabola):
    w = parabola
    ray = build({"kind": "cloud",
                 "params": {"points": [[float(x)] for x in range(101)],
                            "metric": "l2", "basepoint": [0.0]}})
    f_idx = np.array([w.index((x, 0)) for (x,) in
                      ((int(p[0]),) for p in ray.coords)])
    rep = qi_check(f_idx, ray, w, 1.0, 0.5, 2.0)
    assert rep.lower_ok and rep.upper_ok
    assert not rep.density_ok  # the ray is not boundedly dense in the region
    pairs = [(((x, 0)), ((x, y))) for (x, y) in w.ids]
    E = Relation.from_id_pairs(w, pairs)
    prof = control_profile(E, w, r_grid=[16.0, 36.0, 64.0])
    assert prof.eps_forward(64.0) < prof.eps_forward(16.0) < 0.3
