"""Synchronous round loop.

Per round: every live agent observes the pre-move world and picks an action,
the scheduler (which may look at those choices) emits a mask, moves resolve
simultaneously, crossings are detected, and pebble actions land where the
agent ended up.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from . import protocol as P
from .graph import EdgeMask, PortLabeledGraph, TopologyInfo, analyze, is_connected
from .scheduler import Intent, Scheduler

__all__ = [
    "EngineError",
    "PebbleBudgetExceeded",
    "IllegalPort",
    "DisconnectedMask",
    "WorldState",
    "TraceEvent",
    "RunReport",
    "Simulation",
    "build_observation",
    "gathering_outcome",
    "run_round",
    "run_until",
    "choose_starts",
]


class EngineError(RuntimeError):
    pass


class PebbleBudgetExceeded(EngineError):
    pass


class IllegalPort(EngineError):
    pass


class DisconnectedMask(EngineError):
    pass


@dataclass
class WorldState:
    round: int
    agent_position: list[int]
    agent_terminated: list[bool]
    pebble_count: list[int]
    carried_pebbles: list[int]
    current_mask: Optional[EdgeMask] = None
    arrival_port: list = field(default_factory=list)
    blocked: list = field(default_factory=list)
    crossed: list = field(default_factory=list)
    last_count: list = field(default_factory=list)
    moved: list = field(default_factory=list)
    first_pebble: list = field(default_factory=list)  # node of each agent's first pebble, None while in hand

    @classmethod
    def initial(cls, graph: PortLabeledGraph, starts: Sequence[int]) -> "WorldState":
        k = len(starts)
        if len(set(starts)) != k:
            raise ValueError("agents must start on distinct nodes")
        for s in starts:
            if not 0 <= s < graph.n:
                raise ValueError(f"start node {s} out of range")
        return cls(
            round=0,
            agent_position=list(starts),
            agent_terminated=[False] * k,
            pebble_count=[0] * graph.n,
            carried_pebbles=[2] * k,
            arrival_port=[None] * k,
            blocked=[False] * k,
            crossed=[False] * k,
            last_count=[None] * k,
            moved=[False] * k,
            first_pebble=[None] * k,
        )

    @property
    def k(self) -> int:
        return len(self.agent_position)

    def live(self) -> list[int]:
        return [i for i in range(self.k) if not self.agent_terminated[i]]


@dataclass(frozen=True)
class TraceEvent:
    round: int
    entity: str
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"round": self.round, "entity": self.entity, "kind": self.kind, "payload": self.payload},
            sort_keys=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(d["round"], d["entity"], d["kind"], d["payload"])


@dataclass
class RunReport:
    outcome: str
    final_round: int
    positions: list[int]
    terminated: list[bool]
    pebble_cycle_arrival: list[Optional[int]]
    phase2_entry: list[Optional[int]]
    termination_round: list[Optional[int]]
    termination_reason: list[Optional[str]]
    elections: list[tuple[int, int, int, int]]  # (agent, round, node, data_round)
    handshakes: int
    k: int
    n: int

    @property
    def gathered(self) -> bool:
        return self.outcome in ("gathered_node", "gathered_edge")

    @property
    def all_terminated(self) -> bool:
        return all(self.terminated)


def gathering_outcome(graph: PortLabeledGraph, positions: Sequence[int]) -> Optional[str]:
    nodes = set(positions)
    if len(nodes) == 1:
        return "gathered_node"
    if len(nodes) == 2:
        a, b = nodes
        if graph.edge_between(a, b) is not None:
            return "gathered_edge"
    return None


def build_observation(world: WorldState, graph: PortLabeledGraph, agent: int, counts: Counter) -> P.Observation:
    node = world.agent_position[agent]
    return P.Observation(
        degree=graph.degree(node),
        arrival_port=world.arrival_port[agent],
        agent_count=counts[node],
        pebble_count=world.pebble_count[node],
        blocked=world.blocked[agent],
        crossed=world.crossed[agent],
        prev_agent_count=None if world.moved[agent] else world.last_count[agent],
    )


class Simulation:
    """One engine instance: graph, world, agent memories, scheduler and trace sinks."""

    def __init__(
        self,
        graph: PortLabeledGraph,
        starts: Sequence[int],
        scheduler: Scheduler,
        delta: float = 4.0,
        sinks: Iterable[Callable[[TraceEvent], None]] = (),
        verbose: bool = False,
        topo: Optional[TopologyInfo] = None,
    ):
        self.graph = graph
        self.topo = topo or analyze(graph)
        self.world = WorldState.initial(graph, starts)
        self.k = len(starts)
        self.delta = delta
        self.scheduler = scheduler
        scheduler.bind(graph, self.topo)
        self.memories: list[Optional[P.AgentMemory]] = [None] * self.k
        self.sinks = list(sinks)
        self.verbose = verbose
        self.pebble_cycle_arrival: list[Optional[int]] = [None] * self.k
        self.phase2_entry: list[Optional[int]] = [None] * self.k
        self.termination_round: list[Optional[int]] = [None] * self.k
        self.termination_reason: list[Optional[str]] = [None] * self.k
        self.elections: list[tuple[int, int, int, int]] = []
        self.handshakes = 0
        self._events: list[TraceEvent] = []
        if self.sinks:
            for i, s in enumerate(starts):
                self._emit(f"agent{i}", "spawn", {"node": s})
            self._flush()

    # ------------------------------------------------------------------
    def _emit(self, entity: str, kind: str, payload: dict) -> None:
        if self.sinks:
            self._events.append(TraceEvent(self.world.round, entity, kind, payload))

    def _flush(self) -> list[TraceEvent]:
        events, self._events = self._events, []
        for ev in events:
            for sink in self.sinks:
                sink(ev)
        return events

    def _resolve_ports(self, node: int, ports: Sequence[int]) -> int:
        for p in ports:
            node = self.graph.follow(node, p).neighbor
        return node

    def _record_notes(self, agent: int, node: int, mem: P.AgentMemory) -> None:
        for note in mem.notes:
            kind = note["kind"]
            payload = {"note": kind, "node": node}
            if kind in ("elect", "gathering"):
                payload["target"] = self._resolve_ports(node, note["ports"])
                if kind == "elect":
                    payload["data_round"] = note["data_round"]
                    self.elections.append((agent, self.world.round, payload["target"], note["data_round"]))
            elif kind == "phase2":
                self.phase2_entry[agent] = self.world.round
            elif kind == "terminate":
                payload["reason"] = note["reason"]
                self.termination_reason[agent] = note["reason"]
            for key in ("epoch", "length", "port", "direction"):
                if key in note:
                    payload[key] = note[key]
            self._emit(f"agent{agent}", "protocol", payload)

    # ------------------------------------------------------------------
    def run_round(self) -> list[TraceEvent]:
        world, graph = self.world, self.graph
        live = world.live()
        if not live:
            raise EngineError("no live agents")
        counts = Counter(world.agent_position)

        actions: dict[int, P.Action] = {}
        observations = {}
        for i in live:
            obs = build_observation(world, graph, i, counts)
            observations[i] = obs
            if self.memories[i] is None:
                self.memories[i], act = P.initialize(self.k, graph.n, self.delta, obs)
            else:
                act = P.advance(self.memories[i], obs)
            actions[i] = act

        intents = []
        for i, act in actions.items():
            if act.moves:
                node = world.agent_position[i]
                if act.port is None or not 0 <= act.port < graph.degree(node):
                    raise IllegalPort(f"agent {i} chose port {act.port} at degree {graph.degree(node)}")
                link = graph.follow(node, act.port)
                intents.append(Intent(i, node, act.port, link.edge, link.neighbor))

        mask = self.scheduler.next_mask(world, intents, self.memories)
        if not is_connected(graph, mask):
            raise DisconnectedMask(f"scheduler {self.scheduler.kind} disconnected the graph in round {world.round}")
        world.current_mask = mask
        self._emit("scheduler", "mask", {"disabled": mask.disabled(graph)})
        if self.verbose:
            for i in live:
                o = observations[i]
                self._emit(f"agent{i}", "observe", {
                    "degree": o.degree, "arrival_port": o.arrival_port, "agents": o.agent_count,
                    "pebbles": o.pebble_count, "blocked": o.blocked, "crossed": o.crossed,
                })
            for i in live:
                self._emit(f"agent{i}", "act", {"action": actions[i].kind, "port": actions[i].port})
        for i in live:
            if self.memories[i].notes:
                self._record_notes(i, world.agent_position[i], self.memories[i])

        # movement, all at once
        for i in live:
            world.last_count[i] = counts[world.agent_position[i]]
        traversals = {}
        for it in intents:
            i = it.agent
            if actions[i].kind == P.MOVE_CARRY and world.carried_pebbles[i] < 2:
                if world.pebble_count[it.node] < 1:
                    raise PebbleBudgetExceeded(f"agent {i} picks up a pebble at empty node {it.node}")
                world.pebble_count[it.node] -= 1
                world.carried_pebbles[i] += 1
                world.first_pebble[i] = None
                self._emit(f"agent{i}", "pebble_picked", {"node": it.node})
            if it.edge in mask.enabled:
                world.agent_position[i] = it.target
                world.arrival_port[i] = graph.follow(it.node, it.port).reverse_port
                world.blocked[i] = False
                world.moved[i] = True
                traversals[i] = (it.edge, it.node)
                self._emit(f"agent{i}", "move", {"from": it.node, "to": it.target, "port": it.port})
            else:
                world.arrival_port[i] = None
                world.blocked[i] = True
                world.moved[i] = False
                self._emit(f"agent{i}", "blocked", {"node": it.node, "port": it.port})
        for i in live:
            if not actions[i].moves:
                world.arrival_port[i] = None
                world.blocked[i] = False
                world.moved[i] = False
            world.crossed[i] = False
        by_edge: dict[int, list[tuple[int, int]]] = {}
        for i, (edge, origin) in traversals.items():
            by_edge.setdefault(edge, []).append((i, origin))
        for edge, movers in sorted(by_edge.items()):
            origins = {o for _, o in movers}
            if len(origins) == 2:
                for i, _ in movers:
                    world.crossed[i] = True
                self._emit("engine", "crossed", {"edge": edge, "agents": sorted(i for i, _ in movers)})

        # pebble actions at the post-move position
        for i in live:
            act = actions[i]
            node = world.agent_position[i]
            if act.kind == P.PLACE:
                if world.carried_pebbles[i] < 2:
                    raise PebbleBudgetExceeded(f"agent {i} places a first pebble it does not hold")
                world.carried_pebbles[i] -= 1
                world.pebble_count[node] += 1
                world.first_pebble[i] = node
                if self.pebble_cycle_arrival[i] is None and self.topo.on_cycle(node):
                    self.pebble_cycle_arrival[i] = world.round
                self._emit(f"agent{i}", "pebble_placed", {"node": node, "which": "first"})
            elif act.kind == P.PLACE_SECOND:
                if world.carried_pebbles[i] != 1:
                    raise PebbleBudgetExceeded(f"agent {i} has no second pebble to place")
                world.carried_pebbles[i] = 0
                world.pebble_count[node] += 1
                self.handshakes += 1
                self._emit(f"agent{i}", "pebble_placed", {"node": node, "which": "second"})
            if act.kind in (P.PLACE_SECOND, P.TERMINATE):
                world.agent_terminated[i] = True
                self.termination_round[i] = world.round
                self._emit(f"agent{i}", "terminated", {"node": node})

        if sum(world.pebble_count) + sum(world.carried_pebbles) != 2 * self.k:
            raise PebbleBudgetExceeded("pebble conservation broken")
        world.round += 1
        return self._flush()

    def outcome(self) -> str:
        got = gathering_outcome(self.graph, self.world.agent_position)
        if got is not None and all(self.world.agent_terminated):
            return got
        if all(self.world.agent_terminated):
            return "terminated_apart"
        return "horizon_exhausted"

    def run_until(self, horizon: int) -> RunReport:
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        while self.world.round < horizon and self.world.live():
            self.run_round()
        w = self.world
        return RunReport(
            outcome=self.outcome(),
            final_round=w.round,
            positions=list(w.agent_position),
            terminated=list(w.agent_terminated),
            pebble_cycle_arrival=list(self.pebble_cycle_arrival),
            phase2_entry=list(self.phase2_entry),
            termination_round=list(self.termination_round),
            termination_reason=list(self.termination_reason),
            elections=list(self.elections),
            handshakes=self.handshakes,
            k=self.k,
            n=self.graph.n,
        )


def run_round(sim: Simulation) -> tuple[WorldState, list[TraceEvent]]:
    events = sim.run_round()
    return sim.world, events


def run_until(
    graph: PortLabeledGraph,
    starts: Sequence[int],
    scheduler: Scheduler,
    horizon: int,
    delta: float = 4.0,
    sinks: Iterable[Callable[[TraceEvent], None]] = (),
    verbose: bool = False,
) -> RunReport:
    return Simulation(graph, starts, scheduler, delta, sinks, verbose).run_until(horizon)


def choose_starts(graph: PortLabeledGraph, k: int, seed: int) -> list[int]:
    import random

    if not 1 <= k <= graph.n:
        raise ValueError(f"cannot place {k} agents on {graph.n} nodes")
    rng = random.Random(f"starts:{graph.n}:{k}:{seed}")
    return sorted(rng.sample(range(graph.n), k))
