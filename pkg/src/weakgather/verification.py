"""Ground-truth checks over simulation traces, plus the closed-form round bounds.

Monitors never look at agent memories; they rebuild positions and pebble
locations from trace events and judge them against :class:`TopologyInfo`.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .engine import Simulation, TraceEvent, WorldState, gathering_outcome
from .graph import PortLabeledGraph, TopologyInfo, analyze, generate_multicyclic, generate_unicyclic
from .scheduler import BicyclicSeparator, UnicyclicSeparator, cycle_projection

__all__ = [
    "MalformedTrace",
    "weak_gathering_achieved",
    "tours_bound",
    "pebble_bound",
    "traversal_bound",
    "worst_case_pebble_bound",
    "tree_size",
    "check_round_bound",
    "InvariantStatus",
    "MonitorReport",
    "RunMonitor",
    "monitor_run",
    "ImpossibilityOutcome",
    "impossibility_experiment",
    "CutOutcome",
    "port_automorphisms",
    "symmetric_start",
    "cut_after_election",
]

DEFAULT_DELTA = 4.0
DEFAULT_EPSILON = 2.0


class MalformedTrace(ValueError):
    pass


def weak_gathering_achieved(world: WorldState | Sequence[int], graph: PortLabeledGraph) -> bool:
    positions = world.agent_position if isinstance(world, WorldState) else world
    return gathering_outcome(graph, positions) is not None


# --------------------------------------------------------------------------
# closed forms


def tours_bound(tree_nodes: int, cycle_len: int) -> float:
    """Number of cycle tours until the pebble's tree has been swept (T)."""
    # a tree of one or two nodes is finished within epoch 0
    e_max = math.ceil(math.log2(tree_nodes - 1)) if tree_nodes > 2 else 0
    return (2 ** (e_max + 1) - 1) / cycle_len


def pebble_bound(
    n: int, cycle_len: int, tree_nodes: int, delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON
) -> float:
    """Rounds until a pebble starting in a tree of ``tree_nodes`` nodes reaches the cycle (S)."""
    t = tours_bound(tree_nodes, cycle_len)
    per_block = delta * n * math.log2(n) - 1
    return t * ((2 * cycle_len + 2 * epsilon * n) * per_block + 2 * (n - cycle_len))


def worst_case_pebble_bound(n: int, delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON) -> float:
    """S(n): the largest pebble bound over every unicyclic graph on n nodes."""
    return max(pebble_bound(n, c, n - c + 1, delta, epsilon) for c in range(3, n + 1))


def traversal_bound(n: int, cycle_len: int, delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON) -> float:
    """Rounds for one full visit of the cycle, with a possible detection detour and every step blocked."""
    return (cycle_len + 2 * epsilon * n) * delta * n * math.log2(n)


def tree_size(graph: PortLabeledGraph, topo: TopologyInfo, node: int) -> int:
    """|G_u|: nodes of the tree hanging from the cycle node above ``node``, that node included."""
    proj = cycle_projection(graph, topo)
    return sum(1 for v in range(graph.n) if proj[v] == proj[node])


def check_round_bound(
    n: int,
    measured: float,
    formula: str = "pebble_bound",
    slack: float = 1.0,
    *,
    cycle_len: Optional[int] = None,
    tree_nodes: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
    epsilon: float = DEFAULT_EPSILON,
) -> bool:
    if n < 3:
        raise ValueError("bounds need n >= 3")
    if formula == "pebble_bound":
        if cycle_len is None or tree_nodes is None:
            bound = worst_case_pebble_bound(n, delta, epsilon)
        else:
            bound = pebble_bound(n, cycle_len, tree_nodes, delta, epsilon)
    elif formula == "traversal_bound":
        bound = traversal_bound(n, cycle_len if cycle_len is not None else n, delta, epsilon)
    else:
        raise ValueError(f"unknown formula {formula!r}")
    return measured <= slack * bound


def port_automorphisms(graph: PortLabeledGraph) -> list[list[int]]:
    """All non-identity node maps that preserve every port label.

    A port-preserving map is pinned down by where node 0 goes, so we try each
    image and follow ports outward.
    """
    found = []
    for image in range(1, graph.n):
        phi = {0: image}
        work = [0]
        good = True
        while work and good:
            u = work.pop()
            if graph.degree(u) != graph.degree(phi[u]):
                good = False
                break
            for p in range(graph.degree(u)):
                a, b = graph.follow(u, p), graph.follow(phi[u], p)
                if a.reverse_port != b.reverse_port:
                    good = False
                    break
                if a.neighbor in phi:
                    if phi[a.neighbor] != b.neighbor:
                        good = False
                        break
                else:
                    phi[a.neighbor] = b.neighbor
                    work.append(a.neighbor)
        if good and len(set(phi.values())) == graph.n:
            found.append([phi[v] for v in range(graph.n)])
    return found


def symmetric_start(graph: PortLabeledGraph, starts: Sequence[int]) -> bool:
    """True when some port-preserving automorphism maps the start set onto itself
    and sends every node somewhere neither equal nor adjacent to it.

    Under the full graph an agent and its image then make the same moves
    forever, always sitting on mapped nodes, so no deterministic protocol can
    put them on one node or one edge.
    """
    occupied = set(starts)
    for phi in port_automorphisms(graph):
        if {phi[v] for v in occupied} != occupied:
            continue
        if all(phi[v] != v and graph.edge_between(v, phi[v]) is None for v in range(graph.n)):
            return True
    return False


# --------------------------------------------------------------------------
# monitors


@dataclass
class InvariantStatus:
    held: bool = True
    first_round: Optional[int] = None
    violations: int = 0
    detail: str = ""

    def violate(self, rnd: int, detail: str) -> None:
        if self.held:
            self.first_round = rnd
            self.detail = detail
        self.held = False
        self.violations += 1


MONITORS = (
    "mask_connectivity",
    "adjacent_moves",
    "pebble_monotone",
    "verification_on_cycle",
    "phase2_confinement",
    "two_groups",
    "election_agreement",
    "final_configuration",
)


@dataclass
class MonitorReport:
    statuses: dict
    pebbles_on_cycle_round: Optional[int]
    phase2_entries: dict
    election_agreement_round: Optional[int]
    outcome: str
    final_round: int
    cohorts_checked: int = 0
    elections_checked: int = 0
    walks_confirmed: int = 0

    @property
    def ok(self) -> bool:
        return all(s.held for s in self.statuses.values())

    def render(self) -> str:
        lines = [f"outcome\t{self.outcome}", f"final_round\t{self.final_round}"]
        lines.append(f"pebbles_on_cycle_round\t{self.pebbles_on_cycle_round}")
        lines.append(f"election_agreement_round\t{self.election_agreement_round}")
        for agent, rnd in sorted(self.phase2_entries.items()):
            lines.append(f"phase2_entry.agent{agent}\t{rnd}")
        lines.append(f"walks_confirmed\t{self.walks_confirmed}")
        lines.append(f"cohorts_checked\t{self.cohorts_checked}")
        lines.append(f"elections_checked\t{self.elections_checked}")
        for name in MONITORS:
            s = self.statuses[name]
            state = "held" if s.held else f"violated\tround={s.first_round}\tcount={s.violations}\t{s.detail}"
            lines.append(f"monitor.{name}\t{state}")
        return "\n".join(lines) + "\n"


class RunMonitor:
    """Incremental monitor; feed it events in order, then call ``finish``."""

    def __init__(self, graph: PortLabeledGraph, topo: Optional[TopologyInfo] = None):
        self.graph = graph
        self.topo = topo or analyze(graph)
        self.status = {name: InvariantStatus() for name in MONITORS}
        self.positions: dict[int, int] = {}
        self.terminated: dict[int, bool] = {}
        self.pebble: dict[int, Optional[int]] = {}
        self.round = -1
        self.all_on_cycle: Optional[int] = None
        self.phase2: dict[int, int] = {}
        self.walks: dict[int, list[int]] = {}
        self.confirmed: set[int] = set()
        self.walks_confirmed = 0
        self.elections: list[tuple[int, int, int, int]] = []
        self.entries: list[tuple[int, int, int]] = []  # (round, agent, target)
        self.open_cohort: list[tuple[int, int, int]] = []
        self.scheduled: dict[int, list[list[tuple[int, int, int]]]] = {}
        self.cohorts_checked = 0
        self.left_first_step: dict[int, int] = {}
        self.disabled: frozenset = frozenset()
        self._last_pebble: dict[int, int] = {}

    @staticmethod
    def _agent(entity: str) -> int:
        if not entity.startswith("agent"):
            raise MalformedTrace(f"expected an agent entity, got {entity!r}")
        return int(entity[5:])

    def _advance_to(self, rnd: int) -> None:
        if rnd < self.round:
            raise MalformedTrace(f"round {rnd} after round {self.round}")
        while self.round < rnd:
            self.round += 1
            self._close_cohort(self.round)
            for cohort in self.scheduled.pop(self.round, []):
                self._check_cohort(cohort, self.round)

    def _close_cohort(self, rnd: int) -> None:
        n = self.graph.n
        if self.open_cohort and rnd >= self.open_cohort[0][0] + n:
            last = max(r for r, _, _ in self.open_cohort)
            self.scheduled.setdefault(max(last + n, rnd), []).append(self.open_cohort)
            self.open_cohort = []

    def _check_cohort(self, cohort, rnd: int) -> None:
        targets = {t for _, _, t in cohort}
        if self.all_on_cycle is None or min(r for r, _, _ in cohort) < self.all_on_cycle or len(targets) != 1:
            return
        u = targets.pop()
        # members that already set off on their second step are no longer heading for u
        members = sorted({a for r, a, _ in cohort if self.left_first_step.get(a, -1) < r})
        if not members:
            return
        nodes = {self.positions[a] for a in members}
        self.cohorts_checked += 1
        bad = len(nodes) > 2 or (len(nodes) == 2 and u not in nodes) or not all(self.topo.on_cycle(v) for v in nodes)
        if bad:
            self.status["two_groups"].violate(rnd, f"cohort {members} on {sorted(nodes)}, target {u}")

    def consume(self, ev: TraceEvent) -> None:
        self._advance_to(ev.round)
        kind, p = ev.kind, ev.payload
        try:
            if kind == "spawn":
                a = self._agent(ev.entity)
                self.positions[a] = p["node"]
                self.terminated[a] = False
                self.pebble[a] = None
            elif kind == "mask":
                self.disabled = frozenset(p["disabled"])
                enabled = frozenset(range(self.graph.edge_count)) - self.disabled
                from .graph import EdgeMask, is_connected

                if not is_connected(self.graph, EdgeMask(enabled)):
                    self.status["mask_connectivity"].violate(ev.round, f"disabled {sorted(self.disabled)}")
            elif kind == "move":
                self._move(self._agent(ev.entity), p["from"], p["to"], ev.round)
            elif kind == "pebble_placed" and p["which"] == "first":
                self._pebble_placed(self._agent(ev.entity), p["node"], ev.round)
            elif kind == "pebble_picked":
                self.pebble[self._agent(ev.entity)] = None
            elif kind == "terminated":
                self.terminated[self._agent(ev.entity)] = True
            elif kind == "protocol":
                self._note(self._agent(ev.entity), p, ev.round)
        except KeyError as exc:
            raise MalformedTrace(f"event {ev} lacks field {exc}") from exc

    def _move(self, a: int, src: int, dst: int, rnd: int) -> None:
        if a not in self.positions:
            raise MalformedTrace(f"agent {a} moves before spawning")
        if self.positions[a] != src:
            self.status["adjacent_moves"].violate(rnd, f"agent {a} moves from {src} but is at {self.positions[a]}")
        edge = self.graph.edge_between(src, dst)
        if edge is None or edge in self.disabled:
            self.status["adjacent_moves"].violate(rnd, f"agent {a} jumps {src}->{dst}")
        self.positions[a] = dst
        if a in self.walks:
            self.walks[a].append(dst)
        if a in self.confirmed and not self.topo.on_cycle(dst):
            self.status["phase2_confinement"].violate(rnd, f"agent {a} left the cycle to {dst}")

    def _pebble_placed(self, a: int, node: int, rnd: int) -> None:
        dist = self.topo.dist_to_cycle
        before = self._last_pebble.get(a)
        if before is not None and dist[node] > dist[before]:
            self.status["pebble_monotone"].violate(rnd, f"agent {a} pebble {before}->{node}")
        self._last_pebble[a] = node
        self.pebble[a] = node
        if self.all_on_cycle is None and len(self.pebble) == len(self.positions):
            if all(v is not None and self.topo.on_cycle(v) for v in self.pebble.values()):
                self.all_on_cycle = rnd + 1

    def _note(self, a: int, p: dict, rnd: int) -> None:
        note = p["note"]
        if note == "verify_begin":
            self.walks[a] = [p["node"]]
        elif note == "verify_failed":
            self.walks.pop(a, None)
        elif note == "verify_confirmed":
            walk = self.walks.pop(a, [p["node"]])
            off = [v for v in walk if not self.topo.on_cycle(v)]
            if off:
                self.status["verification_on_cycle"].violate(rnd, f"agent {a} confirmed a walk through {off}")
            self.confirmed.add(a)
            self.walks_confirmed += 1
        elif note == "phase2":
            self.phase2.setdefault(a, rnd)
        elif note in ("second_step", "walking"):
            self.left_first_step[a] = rnd
        elif note == "elect":
            self.elections.append((a, rnd, p["target"], p["data_round"]))
        elif note == "gathering":
            entry = (rnd, a, p["target"])
            self.entries.append(entry)
            self._close_cohort(rnd)
            self.open_cohort.append(entry)

    def finish(self) -> MonitorReport:
        final_round = self.round + 1
        if self.open_cohort:
            last = max(r for r, _, _ in self.open_cohort)
            self.scheduled.setdefault(last + self.graph.n, []).append(self.open_cohort)
            self.open_cohort = []
        all_done = bool(self.terminated) and all(self.terminated.values())
        for rnd in sorted(self.scheduled):
            if rnd < final_round or all_done:
                for cohort in self.scheduled[rnd]:
                    self._check_cohort(cohort, rnd)
        self.scheduled = {}

        agree_round = None
        valid = [e for e in self.elections if self.all_on_cycle is not None and e[3] >= self.all_on_cycle]
        if valid:
            targets = {e[2] for e in valid}
            if len(targets) > 1:
                first_bad = min(e[1] for e in valid if e[2] != valid[0][2])
                self.status["election_agreement"].violate(first_bad, f"elected nodes {sorted(targets)}")
            elif len({e[0] for e in valid}) >= 2:
                agree_round = sorted(e[1] for e in valid)[1]

        positions = [self.positions[a] for a in sorted(self.positions)]
        if all_done:
            outcome = gathering_outcome(self.graph, positions) or "terminated_apart"
            # a full house can end exploration anywhere; confirmed agents must end on the cycle
            confirmed = [positions[a] for a in self.phase2 if a < len(positions)]
            if outcome == "terminated_apart" or not all(self.topo.on_cycle(v) for v in confirmed):
                self.status["final_configuration"].violate(final_round, f"final positions {positions}")
        else:
            outcome = "horizon_exhausted"
        return MonitorReport(
            statuses=self.status,
            pebbles_on_cycle_round=self.all_on_cycle,
            phase2_entries=dict(self.phase2),
            election_agreement_round=agree_round,
            outcome=outcome,
            final_round=final_round,
            cohorts_checked=self.cohorts_checked,
            elections_checked=len(valid),
            walks_confirmed=self.walks_confirmed,
        )


def monitor_run(trace: Iterable[TraceEvent], graph: PortLabeledGraph, topology: Optional[TopologyInfo] = None) -> MonitorReport:
    mon = RunMonitor(graph, topology)
    saw_any = False
    for ev in trace:
        saw_any = True
        mon.consume(ev)
    if not saw_any:
        raise MalformedTrace("empty trace")
    return mon.finish()


# --------------------------------------------------------------------------
# impossibility experiments


@dataclass
class ImpossibilityOutcome:
    family: str
    n: int
    seed: int
    horizon: int
    rounds: int
    succeeded: bool
    first_success_round: Optional[int]
    targets_touched: bool
    starts: list
    blocked_audit: list = field(default_factory=list)  # (round, disabled edges)


def _separator_starts(graph, topo, family: str, k: int, rng: random.Random) -> list[int]:
    nodes = list(range(graph.n))
    if family == "multicyclic_weak":
        left = [v for v in nodes if topo.partition[v] == "L"]
        right = [v for v in nodes if topo.partition[v] == "R"]
        picks = [rng.choice(left), rng.choice(right)]
    else:
        proj = cycle_projection(graph, topo)
        roots = rng.sample(sorted(topo.cycle_nodes), 2)
        picks = [rng.choice([v for v in nodes if proj[v] == r]) for r in roots]
    rest = [v for v in nodes if v not in picks]
    picks += rng.sample(rest, k - 2)
    return picks


def impossibility_experiment(
    family: str,
    n: int,
    seed: int,
    horizon: int,
    *,
    k: int = 2,
    graph: Optional[PortLabeledGraph] = None,
    variant: str = "disjoint",
    cycle_len: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
    control: bool = False,
) -> ImpossibilityOutcome:
    """Run the protocol against the matching separator and record whether the goal was ever met.

    ``control=True`` swaps the separator for the always-full scheduler.
    """
    from .scheduler import AlwaysFull

    rng = random.Random(f"impossibility:{family}:{n}:{seed}")
    if family == "multicyclic_weak":
        graph = graph or generate_multicyclic(n, variant, seed=seed)
        sched = BicyclicSeparator((0, 1))
    elif family == "unicyclic_gathering":
        graph = graph or generate_unicyclic(n, cycle_len or max(4, n // 2), seed)
        sched = UnicyclicSeparator((0, 1))
    else:
        raise ValueError(f"unknown family {family!r}")
    topo = analyze(graph)
    starts = _separator_starts(graph, topo, family, k, rng)
    if control:
        sched = AlwaysFull()
    audit = []
    sim = Simulation(graph, starts, sched, delta=delta, topo=topo)
    first = None
    touched = False
    while sim.world.round < horizon and sim.world.live():
        sim.run_round()
        w = sim.world
        disabled = w.current_mask.disabled(graph) if w.current_mask else []
        if disabled:
            audit.append((w.round - 1, disabled))
        pos = w.agent_position
        a, b = pos[0], pos[1]
        if a == b or graph.edge_between(a, b) is not None:
            touched = True
        if family == "multicyclic_weak":
            hit = gathering_outcome(graph, pos) is not None
        else:
            hit = len(set(pos)) == 1
        if hit and first is None:
            first = w.round
            if control:
                break
    return ImpossibilityOutcome(
        family=family,
        n=graph.n,
        seed=seed,
        horizon=horizon,
        rounds=sim.world.round,
        succeeded=first is not None,
        first_success_round=first,
        targets_touched=touched,
        starts=starts,
        blocked_audit=audit,
    )


# --------------------------------------------------------------------------
# permanent cut after election


@dataclass
class CutOutcome:
    trigger_round: Optional[int]
    edge: Optional[int]
    endpoints: Optional[tuple[int, int]]
    final_positions: list
    handshakes: int
    last_termination: Optional[int]
    allowance: int
    report: object = None

    @property
    def threshold_fired(self) -> bool:
        return self.report is not None and "blocked_threshold" in self.report.termination_reason

    @property
    def ok(self) -> bool:
        """Everyone ended on the cut edge's endpoints, via a handshake, in time."""
        if self.trigger_round is None or self.last_termination is None:
            return False
        return (
            set(self.final_positions) <= set(self.endpoints)
            and self.handshakes >= 1
            and self.last_termination - self.trigger_round <= self.allowance
        )


def cut_after_election(
    graph: PortLabeledGraph,
    starts: Sequence[int],
    horizon: int,
    *,
    delta: float = DEFAULT_DELTA,
    topo: Optional[TopologyInfo] = None,
) -> CutOutcome:
    """Once every agent is on the cycle, cut for good the first edge two of them are about to cross head-on.

    The first round with all live agents past cycle confirmation and two
    agents heading over the same cycle edge from opposite ends fixes the
    cut (lowest edge id on ties). Runs where that moment never comes report
    ``trigger_round=None``.
    """
    from .scheduler import PermanentCut

    topo = topo or analyze(graph)
    cycle_edges = set().union(*topo.cycle_edges)

    def facing(intents):
        sides: dict[int, set] = {}
        for i in intents:
            if i.edge in cycle_edges:
                sides.setdefault(i.edge, set()).add(i.node)
        return sorted(e for e, origins in sides.items() if len(origins) == 2)

    def trigger(world, intents, memories):
        live = world.live()
        return bool(live) and all(memories[a] is not None and memories[a].phase == 2 for a in live) and bool(facing(intents))

    def pick_edge(world, intents, memories):
        edges = facing(intents)
        return edges[0] if edges else None

    sched = PermanentCut(trigger, pick_edge)
    sim = Simulation(graph, starts, sched, delta=delta, topo=topo)
    report = sim.run_until(horizon)
    n = graph.n
    allowance = math.ceil(delta * n * math.log2(n)) + 3 * n
    endpoints = None
    if sched.edge is not None:
        ends = [(u, graph.follow(u, p).neighbor) for u in range(n) for p in range(graph.degree(u)) if graph.follow(u, p).edge == sched.edge]
        endpoints = tuple(sorted(ends[0]))
    done = [r for r in report.termination_round if r is not None]
    return CutOutcome(
        trigger_round=sched.trigger_round,
        edge=sched.edge,
        endpoints=endpoints,
        final_positions=list(report.positions),
        handshakes=report.handshakes,
        last_termination=max(done) if len(done) == len(starts) else None,
        allowance=allowance,
        report=report,
    )
