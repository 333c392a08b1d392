"""Port-labeled static graphs, instance generators and ground-truth topology.

Agents never see anything in this module except, indirectly, node degrees and
port numbers handed to them by the engine. Node ids, edge ids and the
:class:`TopologyInfo` are for the engine, schedulers and verifier only.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx

__all__ = [
    "GraphError",
    "DisconnectedInput",
    "DuplicateEdge",
    "SelfLoop",
    "BadPortAssignment",
    "BadParameters",
    "FixtureFormatError",
    "Link",
    "PortLabeledGraph",
    "TopologyInfo",
    "EdgeMask",
    "build_graph",
    "generate_unicyclic",
    "generate_multicyclic",
    "analyze",
    "is_connected",
    "full_mask",
    "load_fixture",
    "dump_fixture",
]


class GraphError(ValueError):
    pass


class DisconnectedInput(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class BadPortAssignment(GraphError):
    pass


class BadParameters(GraphError):
    pass


class FixtureFormatError(GraphError):
    pass


@dataclass(frozen=True)
class Link:
    """What lies behind one port: the neighbor, the port we arrive on, the edge id."""

    neighbor: int
    reverse_port: int
    edge: int


@dataclass(frozen=True)
class PortLabeledGraph:
    node_count: int
    edges: tuple[tuple[int, int], ...]
    ports: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[Link, ...], ...]
    meta: Mapping[str, object] = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.node_count

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degree(self, u: int) -> int:
        return len(self.adjacency[u])

    def follow(self, u: int, port: int) -> Link:
        return self.adjacency[u][port]

    def edge_between(self, u: int, w: int) -> int | None:
        for link in self.adjacency[u]:
            if link.neighbor == w:
                return link.edge
        return None

    def neighbors(self, u: int) -> list[int]:
        return [link.neighbor for link in self.adjacency[u]]


@dataclass(frozen=True)
class TopologyInfo:
    cycles: tuple[frozenset[int], ...]
    cycle_edges: tuple[frozenset[int], ...]
    cycle_nodes: frozenset[int]
    non_bridge_edges: frozenset[int]
    dist_to_cycle: tuple[int | None, ...]
    kind: str
    partition: Mapping[int, str] | None = None

    def on_cycle(self, v: int) -> bool:
        return v in self.cycle_nodes


@dataclass(frozen=True)
class EdgeMask:
    enabled: frozenset[int]

    def disabled(self, graph: PortLabeledGraph) -> list[int]:
        return [e for e in range(graph.edge_count) if e not in self.enabled]


def full_mask(graph: PortLabeledGraph) -> EdgeMask:
    return EdgeMask(frozenset(range(graph.edge_count)))


def _check_simple_connected(n: int, edges: Sequence[tuple[int, int]]) -> None:
    if n < 1:
        raise BadParameters(f"node count must be positive, got {n}")
    seen: set[tuple[int, int]] = set()
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise BadParameters(f"edge ({u}, {v}) references a node outside 0..{n - 1}")
        if u == v:
            raise SelfLoop(f"self-loop at node {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"edge {key} appears twice")
        seen.add(key)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = n
    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            components -= 1
    if components != 1:
        raise DisconnectedInput(f"graph has {components} connected components")


def build_graph(
    edge_list: Iterable[tuple[int, int]],
    ports: Sequence[tuple[int, int]] | None = None,
    *,
    seed: int | None = 0,
    node_count: int | None = None,
    meta: Mapping[str, object] | None = None,
) -> PortLabeledGraph:
    """Build a port-labeled graph.

    With ``ports`` given, entry ``i`` is ``(port at u, port at v)`` for edge
    ``i``. Otherwise every node gets a seeded random permutation of its ports.
    """
    edges = tuple((int(u), int(v)) for u, v in edge_list)
    if node_count is None:
        node_count = 1 + max((max(e) for e in edges), default=0)
    n = node_count
    _check_simple_connected(n, edges)

    incident: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (edge, side)
    for i, (u, v) in enumerate(edges):
        incident[u].append((i, 0))
        incident[v].append((i, 1))

    if ports is None:
        rng = random.Random(seed)
        assigned = [[0, 0] for _ in edges]
        for u in range(n):
            labels = list(range(len(incident[u])))
            rng.shuffle(labels)
            for (i, side), p in zip(incident[u], labels):
                assigned[i][side] = p
        port_pairs = tuple((a, b) for a, b in assigned)
    else:
        if len(ports) != len(edges):
            raise BadPortAssignment("one port pair per edge is required")
        port_pairs = tuple((int(a), int(b)) for a, b in ports)

    table: list[list[Link | None]] = [[None] * len(incident[u]) for u in range(n)]
    for i, ((u, v), (pu, pv)) in enumerate(zip(edges, port_pairs)):
        for node, p in ((u, pu), (v, pv)):
            if not 0 <= p < len(table[node]):
                raise BadPortAssignment(f"port {p} out of range at node {node} (degree {len(table[node])})")
            if table[node][p] is not None:
                raise BadPortAssignment(f"port {p} used twice at node {node}")
        table[u][pu] = Link(v, pv, i)
        table[v][pv] = Link(u, pu, i)
    adjacency = tuple(tuple(row) for row in table)  # type: ignore[arg-type]
    return PortLabeledGraph(n, edges, port_pairs, adjacency, dict(meta or {}))


def _random_forest(rng: random.Random, n: int, anchors: list[int], first_free: int) -> list[tuple[int, int]]:
    """Attach nodes first_free..n-1 one by one to a uniformly chosen earlier node."""
    edges = []
    pool = list(anchors)
    for v in range(first_free, n):
        edges.append((rng.choice(pool), v))
        pool.append(v)
    return edges


def generate_unicyclic(n: int, cycle_len: int, seed: int = 0) -> PortLabeledGraph:
    if not 3 <= cycle_len <= n:
        raise BadParameters(f"need 3 <= cycle_len <= n, got cycle_len={cycle_len}, n={n}")
    rng = random.Random(f"unicyclic:{n}:{cycle_len}:{seed}")
    edges = [(i, (i + 1) % cycle_len) for i in range(cycle_len)]
    edges += _random_forest(rng, n, list(range(cycle_len)), cycle_len)
    return build_graph(edges, seed=rng.randrange(2**32), node_count=n)


MULTICYCLIC_VARIANTS = ("disjoint", "shared_vertex", "shared_edge")


def multicyclic_min_nodes(variant: str, c1: int, c2: int, joint: int) -> int:
    if variant == "disjoint":
        return c1 + c2 + joint - 1
    if variant == "shared_vertex":
        return c1 + c2 - 1
    if variant == "shared_edge":
        return c1 + c2 - joint - 1
    raise BadParameters(f"unknown variant {variant!r}")


def generate_multicyclic(
    n: int,
    variant: str = "disjoint",
    c1: int = 3,
    c2: int = 3,
    joint: int = 1,
    seed: int = 0,
) -> PortLabeledGraph:
    """Two cycles plus random trees, with the L/M/R partition recorded in ``meta``.

    ``joint`` is the number of edges on the connecting path (``disjoint``) or
    the number of shared edges (``shared_edge``); it is ignored for
    ``shared_vertex``.
    """
    if variant not in MULTICYCLIC_VARIANTS:
        raise BadParameters(f"unknown variant {variant!r}")
    if c1 < 3 or c2 < 3:
        raise BadParameters("cycle lengths must be at least 3")
    if variant == "disjoint" and joint < 1:
        raise BadParameters("disjoint cycles need a connecting path of at least one edge")
    if variant == "shared_edge" and not 1 <= joint <= min(c1, c2) - 2:
        raise BadParameters("shared path must leave at least two edges of each cycle private")
    need = multicyclic_min_nodes(variant, c1, c2, joint)
    if n < need:
        raise BadParameters(f"descriptor needs at least {need} nodes, got n={n}")
    rng = random.Random(f"multicyclic:{variant}:{n}:{c1}:{c2}:{joint}:{seed}")

    edges: list[tuple[int, int]] = []
    side: dict[int, str] = {}
    if variant == "disjoint":
        # c1 on 0..c1-1 with junction 0; c2 on c1..c1+c2-1 with junction c1.
        edges += [(i, (i + 1) % c1) for i in range(c1)]
        edges += [(c1 + i, c1 + (i + 1) % c2) for i in range(c2)]
        path = [0] + list(range(c1 + c2, c1 + c2 + joint - 1)) + [c1]
        edges += list(zip(path, path[1:]))
        for v in range(1, c1):
            side[v] = "R"
        for v in range(c1 + 1, c1 + c2):
            side[v] = "L"
        for v in path:
            side[v] = "M"
        used = c1 + c2 + joint - 1
    elif variant == "shared_vertex":
        edges += [(i, (i + 1) % c1) for i in range(c1)]
        ring2 = [0] + list(range(c1, c1 + c2 - 1))
        edges += [(ring2[i], ring2[(i + 1) % c2]) for i in range(c2)]
        side[0] = "M"
        for v in range(1, c1):
            side[v] = "R"
        for v in range(c1, c1 + c2 - 1):
            side[v] = "L"
        used = c1 + c2 - 1
    else:
        # Theta graph: shared path a=0..joint=b, then private paths of c1-joint and c2-joint edges.
        shared = list(range(joint + 1))
        edges += list(zip(shared, shared[1:]))
        nxt = joint + 1
        r_inner = list(range(nxt, nxt + c1 - joint - 1))
        nxt += len(r_inner)
        l_inner = list(range(nxt, nxt + c2 - joint - 1))
        nxt += len(l_inner)
        for inner in (r_inner, l_inner):
            route = [joint] + inner + [0]
            edges += list(zip(route, route[1:]))
        for v in shared:
            side[v] = "M"
        for v in r_inner:
            side[v] = "R"
        for v in l_inner:
            side[v] = "L"
        used = nxt

    # Trees inherit the side of the node they hang from.
    pool = list(range(used))
    for v in range(used, n):
        parent = rng.choice(pool)
        edges.append((parent, v))
        side[v] = side[parent]
        pool.append(v)
    meta = {"variant": variant, "partition": dict(sorted(side.items()))}
    return build_graph(edges, seed=rng.randrange(2**32), node_count=n, meta=meta)


def analyze(graph: PortLabeledGraph) -> TopologyInfo:
    g = nx.Graph()
    g.add_nodes_from(range(graph.n))
    for i, (u, v) in enumerate(graph.edges):
        g.add_edge(u, v, id=i)
    cycles = []
    cycle_edges = []
    for basis in nx.cycle_basis(g):
        nodes = frozenset(basis)
        cycles.append(nodes)
        ring = list(basis) + [basis[0]]
        cycle_edges.append(frozenset(g.edges[a, b]["id"] for a, b in zip(ring, ring[1:])))
    cycles.sort(key=lambda c: min(c))
    cycle_edges.sort(key=lambda es: min(es))
    bridges = {g.edges[a, b]["id"] for a, b in nx.bridges(g)}
    non_bridge = frozenset(range(graph.edge_count)) - bridges
    on_cycle = frozenset().union(*cycles) if cycles else frozenset()

    dist: list[int | None] = [None] * graph.n
    queue = deque(sorted(on_cycle))
    for v in queue:
        dist[v] = 0
    while queue:
        u = queue.popleft()
        for w in graph.neighbors(u):
            if dist[w] is None:
                dist[w] = dist[u] + 1  # type: ignore[operator]
                queue.append(w)

    if graph.edge_count == graph.n - 1:
        kind = "tree"
    elif graph.edge_count == graph.n:
        kind = "unicyclic"
    else:
        kind = "multicyclic"
    partition = graph.meta.get("partition")
    return TopologyInfo(
        cycles=tuple(cycles),
        cycle_edges=tuple(cycle_edges),
        cycle_nodes=on_cycle,
        non_bridge_edges=non_bridge,
        dist_to_cycle=tuple(dist),
        kind=kind,
        partition=dict(partition) if isinstance(partition, Mapping) else None,
    )


def is_connected(graph: PortLabeledGraph, mask: EdgeMask) -> bool:
    if graph.n == 0:
        return True
    seen = [False] * graph.n
    seen[0] = True
    stack = [0]
    reached = 1
    while stack:
        u = stack.pop()
        for link in graph.adjacency[u]:
            if link.edge in mask.enabled and not seen[link.neighbor]:
                seen[link.neighbor] = True
                reached += 1
                stack.append(link.neighbor)
    return reached == graph.n


def load_fixture(path: str | Path) -> PortLabeledGraph:
    """Read the ``n m`` / ``u v pu pv`` fixture format; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FixtureFormatError(str(exc)) from exc
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or len(rows[0]) != 2:
        raise FixtureFormatError("first line must be 'n m'")
    try:
        n, m = (int(x) for x in rows[0])
        body = [tuple(int(x) for x in r) for r in rows[1:]]
    except ValueError as exc:
        raise FixtureFormatError(f"non-integer token: {exc}") from exc
    if len(body) != m:
        raise FixtureFormatError(f"header announces {m} edges, found {len(body)}")
    if any(len(r) != 4 for r in body):
        raise FixtureFormatError("edge lines must be 'u v pu pv'")
    edges = [(r[0], r[1]) for r in body]
    ports = [(r[2], r[3]) for r in body]
    return build_graph(edges, ports, node_count=n)


def dump_fixture(graph: PortLabeledGraph) -> str:
    lines = [f"{graph.n} {graph.edge_count}"]
    for (u, v), (pu, pv) in zip(graph.edges, graph.ports):
        lines.append(f"{u} {v} {pu} {pv}")
    return "\n".join(lines) + "\n"
