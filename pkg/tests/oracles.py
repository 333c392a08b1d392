"""Independent reference implementations shared by the test modules.

None of these import the code under test beyond plain data types.
"""

from collections import deque

from weakgather.protocol import CandidateCycle


def uf_connected(n, edges, enabled):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in enabled:
        a, b = edges[i]
        parent[find(a)] = find(b)
    return len({find(v) for v in range(n)}) == 1


def bfs_all_pairs(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    dist = []
    for s in range(n):
        d = [None] * n
        d[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in adj[u]:
                if d[w] is None:
                    d[w] = d[u] + 1
                    q.append(w)
        dist.append(d)
    return dist


def ring_cycle(graph, topo, start, first_port, weights):
    """Read the ground-truth cycle by walking ports from ``start``; also return node order."""
    order = [start]
    deps = [first_port]
    arrs = []
    node, port = start, first_port
    while True:
        link = graph.follow(node, port)
        nxt = link.neighbor
        arrs.append(link.reverse_port)
        if nxt == start:
            break
        # leave through the other cycle port
        cyc = [p for p in range(graph.degree(nxt)) if graph.follow(nxt, p).edge in topo.cycle_edges[0]]
        out = [p for p in cyc if p != link.reverse_port][0]
        order.append(nxt)
        deps.append(out)
        node, port = nxt, out
    arrivals = [arrs[-1]] + arrs[:-1]
    return CandidateCycle(
        arrivals, deps, [graph.degree(v) for v in order], [weights.get(v, 0) for v in order]
    ), order


def oracle_elected_node(graph, topo, weights):
    """Brute force: every start node, both directions, full readings; unique minimum or None."""
    best, owners = None, set()
    for v in topo.cycle_nodes:
        for p in range(graph.degree(v)):
            if graph.follow(v, p).edge not in topo.cycle_edges[0]:
                continue
            cyc, order = ring_cycle(graph, topo, v, p, weights)
            reading = [(cyc.arrivals[i], cyc.departures[i], cyc.weights[i], cyc.degrees[i]) for i in range(len(cyc))]
            if best is None or reading < best:
                best, owners = reading, {v}
            elif reading == best:
                owners.add(v)
    return owners.pop() if len(owners) == 1 else None


def random_cycle(rng, size, k):
    degrees = [rng.randint(2, 4) for _ in range(size)]
    arrivals, departures = [], []
    for d in degrees:
        a, b = rng.sample(range(d), 2)
        arrivals.append(a)
        departures.append(b)
    weights = [0] * size
    for _ in range(k):
        weights[rng.randrange(size)] += 1
    return CandidateCycle(arrivals, departures, degrees, weights)


def brute_force_winner(arrivals, departures, degrees, weights):
    """Index whose reading (in either direction) is the unique least one, else None.

    Walking backwards swaps what counts as the arrival and the departure port.
    """
    size = len(arrivals)
    readings = []
    for start in range(size):
        fwd = tuple((arrivals[(start + j) % size], departures[(start + j) % size],
                     weights[(start + j) % size], degrees[(start + j) % size]) for j in range(size))
        bwd = tuple((departures[(start - j) % size], arrivals[(start - j) % size],
                     weights[(start - j) % size], degrees[(start - j) % size]) for j in range(size))
        readings += [(fwd, start), (bwd, start)]
    best = min(r for r, _ in readings)
    owners = {s for r, s in readings if r == best}
    return owners.pop() if len(owners) == 1 else None
