"""Edge-availability adversaries.

Every scheduler sees the whole world, including what each live agent has
decided to do this round (``intents``), and returns the set of enabled edges.
The engine re-checks connectivity of whatever comes back.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .graph import EdgeMask, PortLabeledGraph, TopologyInfo, full_mask, is_connected

__all__ = [
    "InvalidStrategyForTopology",
    "Intent",
    "Scheduler",
    "AlwaysFull",
    "RandomSingleRemoval",
    "GreedyBlocker",
    "UnicyclicSeparator",
    "BicyclicSeparator",
    "PermanentCut",
    "STRATEGIES",
    "make_scheduler",
    "validate_mask_stream",
    "cycle_projection",
]


class InvalidStrategyForTopology(ValueError):
    pass


@dataclass(frozen=True)
class Intent:
    agent: int
    node: int
    port: int
    edge: int
    target: int


def _without(graph: PortLabeledGraph, removed: Sequence[int]) -> EdgeMask:
    return EdgeMask(frozenset(range(graph.edge_count)) - frozenset(removed))


class Scheduler:
    kind = "abstract"

    def bind(self, graph: PortLabeledGraph, topo: TopologyInfo) -> None:
        self.graph = graph
        self.topo = topo

    def next_mask(self, world, intents: Sequence[Intent], memories=None) -> EdgeMask:
        raise NotImplementedError


class AlwaysFull(Scheduler):
    kind = "always_full"

    def next_mask(self, world, intents, memories=None):
        return full_mask(self.graph)


class RandomSingleRemoval(Scheduler):
    kind = "random_single_removal"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def bind(self, graph, topo):
        super().bind(graph, topo)
        self.candidates = sorted(topo.non_bridge_edges)

    def next_mask(self, world, intents, memories=None):
        # Always draw twice so the stream does not depend on the coin outcome.
        coin = self.rng.random()
        pick = self.rng.randrange(len(self.candidates)) if self.candidates else 0
        if coin < 0.5 or not self.candidates:
            return full_mask(self.graph)
        return _without(self.graph, [self.candidates[pick]])


class GreedyBlocker(Scheduler):
    kind = "greedy_blocker"

    def next_mask(self, world, intents, memories=None):
        votes = Counter(i.edge for i in intents if i.edge in self.topo.non_bridge_edges)
        if not votes:
            return full_mask(self.graph)
        edge = min(votes, key=lambda e: (-votes[e], e))
        return _without(self.graph, [edge])


def cycle_projection(graph: PortLabeledGraph, topo: TopologyInfo) -> list[int]:
    """Cycle node at the root of each node's hanging tree."""
    proj = [-1] * graph.n
    frontier = sorted(topo.cycle_nodes)
    for v in frontier:
        proj[v] = v
    while frontier:
        nxt = []
        for u in frontier:
            for w in graph.neighbors(u):
                if proj[w] < 0:
                    proj[w] = proj[u]
                    nxt.append(w)
        frontier = nxt
    return proj


class UnicyclicSeparator(Scheduler):
    """Keeps two agents' cycle projections apart, so they never share a node."""

    kind = "unicyclic_separator"

    def __init__(self, targets: Optional[tuple[int, int]] = None):
        self.targets = targets

    def bind(self, graph, topo):
        if topo.kind != "unicyclic":
            raise InvalidStrategyForTopology(f"{self.kind} needs a unicyclic graph, got {topo.kind}")
        super().bind(graph, topo)
        self.proj = cycle_projection(graph, topo)
        self.cycle_edges = set(topo.cycle_edges[0])

    def choose_targets(self, positions: Sequence[int]) -> tuple[int, int]:
        if self.targets is not None:
            return self.targets
        for a in range(len(positions)):
            for b in range(a + 1, len(positions)):
                if self.proj[positions[a]] != self.proj[positions[b]]:
                    return a, b
        return 0, 1 if len(positions) > 1 else 0

    def next_mask(self, world, intents, memories=None):
        if self.targets is None:
            self.targets = self.choose_targets(world.agent_position)
        a, b = self.targets
        by_agent = {i.agent: i for i in intents}
        after = {}
        for t in (a, b):
            intent = by_agent.get(t)
            after[t] = self.proj[intent.target if intent else world.agent_position[t]]
        if after[a] != after[b]:
            return full_mask(self.graph)
        for t in (a, b):
            intent = by_agent.get(t)
            if intent and intent.edge in self.cycle_edges:
                return _without(self.graph, [intent.edge])
        return full_mask(self.graph)


class BicyclicSeparator(Scheduler):
    """Pins one agent inside L and another inside R by cutting their exits into M."""

    kind = "bicyclic_separator"

    def __init__(self, targets: Optional[tuple[int, int]] = None):
        self.targets = targets

    def bind(self, graph, topo):
        if topo.kind != "multicyclic" or not topo.partition:
            raise InvalidStrategyForTopology(f"{self.kind} needs a multicyclic graph with an L/M/R partition")
        super().bind(graph, topo)
        self.side = topo.partition

    def choose_targets(self, positions: Sequence[int]) -> tuple[int, int]:
        if self.targets is not None:
            return self.targets
        left = [i for i, p in enumerate(positions) if self.side[p] == "L"]
        right = [i for i, p in enumerate(positions) if self.side[p] == "R"]
        if not left or not right:
            raise InvalidStrategyForTopology("need one agent starting in L and one in R")
        return left[0], right[0]

    def next_mask(self, world, intents, memories=None):
        if self.targets is None:
            self.targets = self.choose_targets(world.agent_position)
        removed = []
        for agent, home in zip(self.targets, ("L", "R")):
            for i in intents:
                if i.agent == agent and self.side[i.node] == home and self.side[i.target] != home:
                    removed.append(i.edge)
        return _without(self.graph, removed)


class PermanentCut(Scheduler):
    """Full graph until ``trigger`` fires, then one fixed edge stays down for good.

    ``pick_edge`` is called once at trigger time with (world, intents, memories)
    and returns the edge to remove, or None to keep waiting; ``trigger`` gets
    the same arguments.
    """

    kind = "permanent_cut"

    def __init__(self, trigger: Callable, pick_edge: Callable):
        self.trigger = trigger
        self.pick_edge = pick_edge
        self.edge: Optional[int] = None
        self.trigger_round: Optional[int] = None

    def next_mask(self, world, intents, memories=None):
        if self.edge is None and self.trigger(world, intents, memories):
            self.edge = self.pick_edge(world, intents, memories)
            if self.edge is not None:
                self.trigger_round = world.round
        if self.edge is None:
            return full_mask(self.graph)
        return _without(self.graph, [self.edge])


STRATEGIES = {
    "always_full": lambda seed, targets: AlwaysFull(),
    "random_single_removal": lambda seed, targets: RandomSingleRemoval(seed),
    "greedy_blocker": lambda seed, targets: GreedyBlocker(),
    "unicyclic_separator": lambda seed, targets: UnicyclicSeparator(targets),
    "bicyclic_separator": lambda seed, targets: BicyclicSeparator(targets),
}


def make_scheduler(kind: str, seed: int = 0, targets: Optional[tuple[int, int]] = None) -> Scheduler:
    try:
        return STRATEGIES[kind](seed, targets)
    except KeyError:
        raise ValueError(f"unknown scheduler {kind!r}; choose from {sorted(STRATEGIES)}") from None


def validate_mask_stream(graph: PortLabeledGraph, masks) -> bool:
    return all(is_connected(graph, m) for m in masks)
