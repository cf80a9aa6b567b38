"""Window construction and distance queries against independent oracles."""

import math
from collections import deque

import numpy as np
import pytest

from coarsekit.space import (MetricWindow, WindowError, build,
                             load_distance_csv, load_edge_list)


def bfs_oracle(adjacency, start):
    """Unweighted BFS distances; the independent check for word metrics."""
    dist = {start: 0}
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adjacency(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def z2_adjacency(radius):
    def adj(p):
        x, y = p
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (x + dx, y + dy)
            if abs(q[0]) + abs(q[1]) <= radius:
                yield q
    return adj


@pytest.fixture(scope="module")
def z2_window():
    return build({"kind": "cayley", "params": {"group": "Z^d", "d": 2, "radius": 10}})


def test_cayley_z2_point_count(z2_window):
    # lattice ball of l1-radius 10: 2*10^2 + 2*10 + 1
    assert z2_window.n_points == 221


def test_cayley_z2_distances_match_bfs(z2_window):
    oracle = bfs_oracle(z2_adjacency(10), (0, 0))
    assert len(oracle) == 221
    for pid, d in oracle.items():
        assert z2_window.norm(z2_window.index(pid)) == d
    # all pairwise distances from a few sources
    for src in [(0, 0), (3, 4), (-10, 0), (2, -5)]:
        od = bfs_oracle(z2_adjacency(10), src)
        i = z2_window.index(src)
        for pid, d in od.items():
            assert z2_window.dist(i, z2_window.index(pid)) == d


def test_norm_examples(z2_window):
    assert z2_window.norm(z2_window.basepoint) == 0
    assert z2_window.norm(z2_window.index((3, 4))) == 7


def test_single_point_matrix_window():
    w = build({"kind": "matrix", "params": {"ids": ["p"], "matrix": [[0.0]]}})
    assert w.radius == 0.0
    assert w.n_points == 1


def test_parabolic_window_contents():
    w = build({"kind": "parabolic", "params": {"xmax": 100}})
    for (x, y) in w.ids:
        assert x >= 0 and y * y <= x
    assert (4, 2) in w.ids
    assert (4, 3) not in w.ids
    i = w.index((4, 2))
    assert w.norm(i) == pytest.approx(math.sqrt(20))


def test_dist_to_set_brute_force():
    rng = np.random.default_rng(0)
    w = build({"kind": "cloud", "params": {"n": 60, "dim": 2, "radius": 30.0},
               "seed": 5})
    for _ in range(25):
        a = rng.choice(w.n_points, size=rng.integers(1, 12), replace=False)
        i = int(rng.integers(0, w.n_points))
        expect = min(w.dist(i, int(j)) for j in a)
        assert w.dist_to_set(i, a) == pytest.approx(expect)


def test_dist_to_set_examples():
    line = build({"kind": "cayley", "params": {"group": "Z^d", "d": 1, "radius": 9}})
    # shift ids: window is [-9, 9]; use {0..9} model via indices of 0..9
    seven = line.index((7,))
    target = line.indices_of([(0,), (1,), (2,)])
    assert line.dist_to_set(seven, target) == 5
    assert line.dist_to_set(seven, line.indices_of([(7,)])) == 0
    assert line.dist_to_set(seven, []) == line.sentinel == line.radius + 1


def test_annulus(z2_window):
    allpts = z2_window.annulus(0, z2_window.radius)
    assert allpts.size == z2_window.n_points
    ring3 = z2_window.annulus(3, 3)
    # lattice points of l1-norm exactly 3
    assert ring3.size == 12
    for i in ring3:
        assert z2_window.norm(int(i)) == 3


def test_triangle_inequality_exhaustive_small():
    w = build({"kind": "cloud", "params": {"n": 40, "dim": 3, "radius": 5.0},
               "seed": 3})
    w.validate(full_limit=500)  # exhaustive at this size


def test_cayley_left_action_invariance(z2_window):
    rng = np.random.default_rng(1)
    ids = set(z2_window.ids)
    for _ in range(200):
        g = tuple(rng.integers(-3, 4, 2))
        x = z2_window.ids[rng.integers(0, z2_window.n_points)]
        y = z2_window.ids[rng.integers(0, z2_window.n_points)]
        gx = (x[0] + g[0], x[1] + g[1])
        gy = (y[0] + g[0], y[1] + g[1])
        if gx in ids and gy in ids:
            d1 = z2_window.dist(z2_window.index(x), z2_window.index(y))
            d2 = z2_window.dist(z2_window.index(gx), z2_window.index(gy))
            assert d1 == d2


def test_free_group_window_matches_bfs():
    w = build({"kind": "cayley", "params": {"group": "free", "rank": 2, "radius": 4}})
    # BFS over reduced words
    def adj(word):
        for g in (1, -1, 2, -2):
            if word and word[-1] == -g:
                yield word[:-1]
            elif len(word) < 4:
                yield word + (g,)
    oracle = bfs_oracle(adj, ())
    for wd, d in oracle.items():
        if wd in w._index:
            assert w.norm(w.index(wd)) == d
    assert w.n_points == 1 + 4 * (1 + 3 + 9 + 27)


def test_product_with_line_metric():
    base = {"kind": "cayley", "params": {"group": "Z^d", "d": 2, "radius": 4}}
    w = build({"kind": "product-with-line",
               "params": {"base": base, "half_length": 3}})
    i = w.index(((1, 2), 3))
    j = w.index(((-1, 0), -2))
    base_d = abs(1 - (-1)) + abs(2 - 0)
    assert w.dist(i, j) == pytest.approx(math.sqrt(base_d ** 2 + 25))


def test_disconnected_graph_rejected():
    with pytest.raises(WindowError, match="disconnected"):
        load_edge_list("a b 1\nc d 1\n")


def test_graph_shortest_paths():
    w = load_edge_list("a b 1\nb c 2\na c 10\nc d 1\n")
    ia, id_ = w.index("a"), w.index("d")
    assert w.dist(ia, id_) == pytest.approx(4.0)


def test_oversized_matrix_window_rejected():
    n = 4001
    with pytest.raises(WindowError, match="too large"):
        build({"kind": "matrix",
               "params": {"ids": list(range(n)), "matrix": np.zeros((n, n))}})


def test_distance_csv_roundtrip_and_validation():
    text = ",a,b,c\na,0,1,2\nb,1,0,1\nc,2,1,0\n"
    w = load_distance_csv(text)
    assert w.n_points == 3
    assert w.dist(w.index("a"), w.index("c")) == 2
    bad = ",a,b,c\na,0,1,5\nb,1,0,1\nc,5,1,0\n"
    with pytest.raises(WindowError, match="triangle"):
        load_distance_csv(bad)
    asym = ",a,b\na,0,1\nb,2,0\n"
    with pytest.raises(WindowError, match="asymmetric"):
        load_distance_csv(asym)


def test_window_is_immutable_enough():
    w = build({"kind": "cayley", "params": {"group": "Z^d", "d": 1, "radius": 5}})
    with pytest.raises(Exception):
        w.metric = "l2"
