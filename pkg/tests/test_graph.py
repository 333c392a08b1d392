import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakgather.graph import (
    BadParameters,
    BadPortAssignment,
    DisconnectedInput,
    DuplicateEdge,
    EdgeMask,
    FixtureFormatError,
    SelfLoop,
    analyze,
    build_graph,
    dump_fixture,
    full_mask,
    generate_multicyclic,
    generate_unicyclic,
    is_connected,
    load_fixture,
)

from oracles import bfs_all_pairs, uf_connected


# -- independent oracles ----------------------------------------------------


def cycle_nodes_by_peeling(n, edges):
    """Strip leaves until none remain; what survives is the cycle part."""
    deg = [0] * n
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
        deg[a] += 1
        deg[b] += 1
    alive = set(range(n))
    leaves = [v for v in range(n) if deg[v] <= 1]
    while leaves:
        v = leaves.pop()
        if v not in alive:
            continue
        alive.discard(v)
        for w in adj[v]:
            if w in alive:
                deg[w] -= 1
                if deg[w] == 1:
                    leaves.append(w)
    return alive


def back_edges(n, edges):
    adj = [[] for _ in range(n)]
    for i, (a, b) in enumerate(edges):
        adj[a].append((b, i))
        adj[b].append((a, i))
    seen = set()
    stack = [(0, -1)]
    used = set()
    while stack:
        u, via = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        if via >= 0:
            used.add(via)
        for w, i in adj[u]:
            if w not in seen:
                stack.append((w, i))
    count = len(edges) - len(used)
    return count


def port_symmetric(g):
    for u in range(g.n):
        for p in range(g.degree(u)):
            link = g.follow(u, p)
            back = g.follow(link.neighbor, link.reverse_port)
            if back.neighbor != u or back.reverse_port != p or back.edge != link.edge:
                return False
    return True


# -- build_graph ------------------------------------------------------------


def test_triangle_has_degree_two_everywhere():
    g = build_graph([(0, 1), (1, 2), (2, 0)], seed=7)
    assert [g.degree(v) for v in range(3)] == [2, 2, 2]
    assert port_symmetric(g)


def test_path_with_explicit_ports():
    g = build_graph([(0, 1), (1, 2)], ports=[(0, 1), (0, 0)])
    assert sorted(range(g.degree(1))) == [0, 1]
    assert g.follow(1, 1).neighbor == 0
    assert g.follow(1, 0).neighbor == 2


def test_star_degrees():
    g = build_graph([(0, 1), (0, 2), (0, 3)], seed=1)
    assert g.degree(0) == 3
    assert [g.degree(v) for v in (1, 2, 3)] == [1, 1, 1]


def test_seeded_ports_are_deterministic():
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
    assert build_graph(edges, seed=3).ports == build_graph(edges, seed=3).ports


@pytest.mark.parametrize(
    "edges, ports, exc",
    [
        ([(0, 1), (2, 3)], None, DisconnectedInput),
        ([(0, 1), (1, 0)], None, DuplicateEdge),
        ([(0, 0), (0, 1)], None, SelfLoop),
        ([(0, 1), (1, 2)], [(0, 0), (0, 0)], BadPortAssignment),
        ([(0, 1), (1, 2)], [(0, 5), (0, 0)], BadPortAssignment),
    ],
)
def test_build_graph_rejects(edges, ports, exc):
    with pytest.raises(exc):
        build_graph(edges, ports)


# -- generators -------------------------------------------------------------


def test_smallest_unicyclic_is_a_triangle():
    g = generate_unicyclic(3, 3, seed=0)
    topo = analyze(g)
    assert topo.kind == "unicyclic"
    assert topo.cycle_nodes == frozenset({0, 1, 2})


def test_unicyclic_six_three():
    g = generate_unicyclic(6, 3, seed=1)
    topo = analyze(g)
    assert g.edge_count == g.n == 6
    assert back_edges(g.n, g.edges) == 1
    assert topo.kind == "unicyclic" and len(topo.cycle_nodes) == 3


def test_full_ring_has_no_trees():
    topo = analyze(generate_unicyclic(10, 10, seed=4))
    assert topo.dist_to_cycle == (0,) * 10


@pytest.mark.parametrize("n, c", [(2, 3), (5, 6), (5, 2)])
def test_unicyclic_bad_parameters(n, c):
    with pytest.raises(BadParameters):
        generate_unicyclic(n, c)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 25).flatmap(lambda n: st.tuples(st.just(n), st.integers(3, n))), st.integers(0, 10**6))
def test_generated_unicyclic_properties(nc, seed):
    n, c = nc
    g = generate_unicyclic(n, c, seed)
    topo = analyze(g)
    assert g.edge_count == g.n == n
    assert back_edges(n, g.edges) == 1
    assert port_symmetric(g)
    assert topo.kind == "unicyclic"
    assert topo.cycle_nodes == frozenset(cycle_nodes_by_peeling(n, g.edges))
    assert len(topo.cycle_nodes) == c
    assert generate_unicyclic(n, c, seed) == g


def test_two_triangles_joined_by_path():
    g = generate_multicyclic(8, "disjoint", 3, 3, joint=2, seed=0)
    topo = analyze(g)
    assert topo.kind == "multicyclic"
    sides = set(topo.partition.values())
    assert sides == {"L", "M", "R"}
    assert port_symmetric(g)


def test_partition_separates_the_cycles():
    g = generate_multicyclic(8, "disjoint", 3, 3, joint=2, seed=0)
    topo = analyze(g)
    left = {v for v, s in topo.partition.items() if s == "L"}
    right = {v for v, s in topo.partition.items() if s == "R"}
    # no edge runs directly between L and R
    for a, b in g.edges:
        assert not ({a, b} & left and {a, b} & right)
    # each side holds one cycle apart from its junction with the middle
    middle = {v for v, s in topo.partition.items() if s == "M"}
    assert any(c - middle <= left and c & left for c in topo.cycles)
    assert any(c - middle <= right and c & right for c in topo.cycles)


def test_two_triangles_sharing_a_vertex():
    topo = analyze(generate_multicyclic(5, "shared_vertex", 3, 3, seed=2))
    assert topo.kind == "multicyclic"


def test_shared_edge_variant():
    g = generate_multicyclic(6, "shared_edge", 4, 4, joint=1, seed=2)
    assert g.edge_count == g.n + 1
    assert analyze(g).kind == "multicyclic"


def test_multicyclic_too_small():
    with pytest.raises(BadParameters):
        generate_multicyclic(5, "disjoint", 3, 3, joint=4)


# -- analyze ----------------------------------------------------------------


def test_triangle_distances():
    assert analyze(build_graph([(0, 1), (1, 2), (2, 0)])).dist_to_cycle == (0, 0, 0)


def test_pendant_chain_tip():
    g = build_graph([(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)])
    assert analyze(g).dist_to_cycle[4] == 2


def test_tree_has_no_cycle():
    topo = analyze(build_graph([(0, 1), (1, 2), (1, 3)]))
    assert topo.kind == "tree"
    assert topo.cycle_nodes == frozenset()


@pytest.mark.parametrize("seed", range(25))
def test_dist_to_cycle_matches_bfs(seed):
    n = 4 + seed % 9  # 4..12
    c = 3 + seed % (n - 2)
    g = generate_unicyclic(n, c, seed)
    topo = analyze(g)
    dist = bfs_all_pairs(n, g.edges)
    for v in range(n):
        assert topo.dist_to_cycle[v] == min(dist[v][w] for w in topo.cycle_nodes)
        assert (topo.dist_to_cycle[v] == 0) == (v in topo.cycle_nodes)


# -- connectivity -----------------------------------------------------------


def test_removing_a_cycle_edge_keeps_connectivity():
    g = generate_unicyclic(8, 5, seed=0)
    topo = analyze(g)
    for e in topo.cycle_edges[0]:
        assert is_connected(g, EdgeMask(full_mask(g).enabled - {e}))


def test_removing_a_bridge_disconnects():
    g = generate_unicyclic(8, 5, seed=0)
    topo = analyze(g)
    bridges = set(range(g.edge_count)) - topo.non_bridge_edges
    assert bridges
    for e in bridges:
        assert not is_connected(g, EdgeMask(full_mask(g).enabled - {e}))


def test_full_mask_connected():
    g = generate_unicyclic(9, 4, seed=3)
    assert is_connected(g, full_mask(g))


SMALL_GRAPHS = [
    generate_unicyclic(6, 3, 0),
    generate_unicyclic(10, 10, 1),
    generate_unicyclic(9, 4, 2),
    generate_multicyclic(7, "disjoint", 3, 3, 1, seed=0),
    generate_multicyclic(7, "shared_edge", 4, 4, 1, seed=1),
    build_graph([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)], seed=0),  # K4
]


@pytest.mark.parametrize("g", SMALL_GRAPHS, ids=lambda g: f"n{g.n}m{g.edge_count}")
def test_is_connected_matches_union_find_on_every_mask(g):
    m = g.edge_count
    assert m <= 10
    for bits in itertools.product((0, 1), repeat=m):
        enabled = frozenset(i for i in range(m) if bits[i])
        assert is_connected(g, EdgeMask(enabled)) == uf_connected(g.n, g.edges, enabled)


# -- fixtures ---------------------------------------------------------------


def test_fixture_round_trip(tmp_path):
    g = generate_unicyclic(12, 5, seed=9)
    path = tmp_path / "g.txt"
    path.write_text(dump_fixture(g))
    assert load_fixture(path) == g


def test_fixture_comments_ignored(tmp_path):
    path = tmp_path / "tri.txt"
    path.write_text("# a triangle\n3 3\n0 1 0 0\n1 2 1 0\n2 0 1 1  # closing edge\n")
    g = load_fixture(path)
    assert g.n == 3 and analyze(g).kind == "unicyclic"


@pytest.mark.parametrize("text", ["", "3\n", "3 3\n0 1 0 0\n", "2 1\n0 x 0 0\n", "3 3\n0 1 0 0\n1 2 1 0\n2 0 1 7\n"])
def test_malformed_fixture(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises((FixtureFormatError, BadPortAssignment)):
        load_fixture(path)


def test_missing_fixture(tmp_path):
    with pytest.raises(FixtureFormatError):
        load_fixture(tmp_path / "absent.txt")
