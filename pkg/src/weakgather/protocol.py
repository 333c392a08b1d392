"""Per-agent state machine for weak gathering with pebbles.

An agent only ever sees an :class:`Observation` (degree, arrival port, agent
and pebble multiplicities, blocked/crossed flags) and answers with an
:class:`Action`. Everything it knows about the graph lives in its
:class:`LocalMap`, a tree of records in which one physical node may appear
many times.

Phase one explores the map depth-first in epochs of depth ``2**epoch``
around the agent's own pebble, marks records that cannot be on the cycle,
drags the pebble towards the cycle, and tries to close a candidate cycle
once ``k + 1`` pebbles have been sighted along a line. Phase two walks the
confirmed cycle, elects a meeting node and gathers.

``advance`` mutates a memory in place (the engine uses it); ``step`` is the
pure wrapper.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "ProtocolInvariantViolation",
    "DegreeMismatch",
    "PebbleMissing",
    "BadCandidate",
    "Action",
    "Observation",
    "MapRecord",
    "LocalMap",
    "CandidateCycle",
    "AgentMemory",
    "termination_threshold",
    "initialize",
    "step",
    "advance",
    "dfs_next_port",
    "dfs_depth_turnaround",
    "advance_epoch",
    "extend_map",
    "mark_non_cycle",
    "record_pebble_sighting",
    "try_cycle_detection",
    "canonical_strings",
    "elect_meeting_node",
]


class ProtocolInvariantViolation(RuntimeError):
    pass


class DegreeMismatch(ProtocolInvariantViolation):
    pass


class PebbleMissing(ProtocolInvariantViolation):
    pass


class BadCandidate(ValueError):
    pass


STAY = "stay"
MOVE = "move"
MOVE_CARRY = "move_carrying_pebble"
PLACE = "place_pebble"
PLACE_SECOND = "place_second_pebble_and_terminate"
TERMINATE = "terminate"
MOVING_KINDS = (MOVE, MOVE_CARRY)


@dataclass(frozen=True)
class Action:
    kind: str
    port: Optional[int] = None

    @property
    def moves(self) -> bool:
        return self.kind in MOVING_KINDS

    def __str__(self) -> str:
        return self.kind if self.port is None else f"{self.kind}({self.port})"


@dataclass(frozen=True)
class Observation:
    degree: int
    arrival_port: Optional[int] = None
    agent_count: int = 1
    pebble_count: int = 0
    blocked: bool = False
    crossed: bool = False
    prev_agent_count: Optional[int] = None


UNMARKED, T_MARK, STRUCK_T = 0, 1, 2


@dataclass
class MapRecord:
    degree: int
    links: list  # port -> (record, reverse port) or None
    parent: int = -1
    parent_port: Optional[int] = None
    depth: int = 0
    not_cycle: bool = False
    exit_port: Optional[int] = None  # the one port still open when the record was marked
    tmark: int = UNMARKED
    tweight: int = 0
    sighted: int = -1


class LocalMap:
    """Records linked through ports; always a tree, rooted at the agent's pebble."""

    def __init__(self, root_degree: int):
        self.records: list[MapRecord] = [MapRecord(root_degree, [None] * root_degree)]
        self.root = 0

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> MapRecord:
        return self.records[i]

    def add_child(self, parent: int, port: int, degree: int, arrival: int) -> int:
        rec = MapRecord(degree, [None] * degree, parent, arrival, self.records[parent].depth + 1)
        self.records.append(rec)
        child = len(self.records) - 1
        self.records[parent].links[port] = (child, arrival)
        rec.links[arrival] = (parent, port)
        return child

    def neighbor(self, rec: int, port: int) -> Optional[tuple[int, int]]:
        return self.records[rec].links[port]

    def unmarked_neighbors(self, rec: int) -> int:
        count = 0
        for link in self.records[rec].links:
            if link is None or not self.records[link[0]].not_cycle:
                count += 1
        return count

    def reroot(self, new_root: int) -> None:
        self.root = new_root
        r = self.records[new_root]
        r.parent, r.parent_port, r.depth = -1, None, 0
        stack = [new_root]
        while stack:
            a = stack.pop()
            ra = self.records[a]
            for p, link in enumerate(ra.links):
                if link is None or link[0] == ra.parent:
                    continue
                b, q = link
                rb = self.records[b]
                rb.parent, rb.parent_port, rb.depth = a, q, ra.depth + 1
                stack.append(b)

    def path(self, a: int, b: int) -> list[int]:
        """Records on the tree path from a to b, both included."""
        up_a, up_b = [a], [b]
        x, y = a, b
        while self.records[x].depth > self.records[y].depth:
            x = self.records[x].parent
            up_a.append(x)
        while self.records[y].depth > self.records[x].depth:
            y = self.records[y].parent
            up_b.append(y)
        while x != y:
            x = self.records[x].parent
            y = self.records[y].parent
            up_a.append(x)
            up_b.append(y)
        return up_a + up_b[-2::-1]

    def port_between(self, a: int, b: int) -> tuple[int, int]:
        for p, link in enumerate(self.records[a].links):
            if link is not None and link[0] == b:
                return p, link[1]
        raise ProtocolInvariantViolation(f"records {a} and {b} are not linked")


@dataclass
class CandidateCycle:
    """Closed walk believed to be the cycle; position 0 doubles as the last position."""

    arrivals: list[int]
    departures: list[int]
    degrees: list[int]
    weights: list[int]

    def __len__(self) -> int:
        return len(self.arrivals)

    def key(self, i: int, direction: int) -> tuple[int, int, int, int]:
        if direction > 0:
            return (self.arrivals[i], self.departures[i], self.weights[i], self.degrees[i])
        return (self.departures[i], self.arrivals[i], self.weights[i], self.degrees[i])

    def port_towards(self, i: int, direction: int) -> int:
        return self.departures[i] if direction > 0 else self.arrivals[i]

    def expected_arrival(self, i: int, direction: int) -> int:
        return self.arrivals[i] if direction > 0 else self.departures[i]

    def rotated(self, shift: int) -> "CandidateCycle":
        s = shift % len(self)
        return CandidateCycle(
            self.arrivals[s:] + self.arrivals[:s],
            self.departures[s:] + self.departures[:s],
            self.degrees[s:] + self.degrees[:s],
            self.weights[s:] + self.weights[:s],
        )

    def reversed(self) -> "CandidateCycle":
        """The same cycle read in the opposite direction, starting at the same position."""
        idx = [(-j) % len(self) for j in range(len(self))]
        return CandidateCycle(
            [self.departures[i] for i in idx],
            [self.arrivals[i] for i in idx],
            [self.degrees[i] for i in idx],
            [self.weights[i] for i in idx],
        )


def canonical_strings(cycle: CandidateCycle) -> dict[tuple[int, int], tuple]:
    """Every (start, direction) reading of the cycle, as a comparable tuple."""
    size = len(cycle)
    out = {}
    for start in range(size):
        for direction in (1, -1):
            out[(start, direction)] = tuple(
                cycle.key((start + direction * j) % size, direction) for j in range(size)
            )
    return out


def elect_meeting_node(cycle: CandidateCycle, k: int) -> Optional[int]:
    """Position holding the lexicographically least reading, or None on a tie."""
    if sum(cycle.weights) != k:
        raise BadCandidate(f"cycle carries {sum(cycle.weights)} pebbles, expected {k}")
    readings = canonical_strings(cycle)
    best = min(readings.values())
    winners = {start for (start, _), s in readings.items() if s == best}
    if len(winners) != 1:
        return None
    return winners.pop()


def clockwise_sign(cycle: CandidateCycle, u: int) -> int:
    """Clockwise leaves the elected node through its smaller cycle port."""
    return 1 if cycle.departures[u] < cycle.arrivals[u] else -1


def termination_threshold(n: int, delta_const: float) -> int:
    return math.ceil(delta_const * n * math.log2(n))


@dataclass
class AgentMemory:
    k: int
    n: int
    delta_const: float
    threshold: int
    round: int = 0
    epoch: int = 0
    rounds_blocked: int = 0
    pebbles_found: int = 0
    phase: int = 1
    state: Optional[str] = None  # phase two: "walking" | "gathering"
    local_map: Optional[LocalMap] = None
    cur: int = 0
    dfs_last_port: Optional[int] = None
    has_second_pebble: bool = True
    carrying: bool = False
    sightings: int = 0
    terminated: bool = False
    last_action: Optional[Action] = None
    pending_port: Optional[int] = None
    prev_obs: Optional[Observation] = None
    prev_prev_count: Optional[int] = None
    expect_pebble_delta: int = 0
    still: int = 0  # consecutive rounds without a successful move
    # cycle verification
    vf_stage: Optional[str] = None
    vf_cycle: Optional[CandidateCycle] = None
    vf_expected: list = field(default_factory=list)
    vf_approach: list = field(default_factory=list)
    vf_trail: list = field(default_factory=list)  # (arrival port, record left) per step since leaving origin
    vf_back_record: Optional[int] = None
    vf_index: int = 0
    vf_observed: list = field(default_factory=list)
    vf_origin: tuple = ()
    # phase two
    candidate_cycle: Optional[CandidateCycle] = None
    pos: int = 0
    elected_offset: Optional[int] = None
    cw: int = 1
    direction: int = 1
    lap_moves: int = 0
    lap_start_round: int = 0
    data_round: int = 0
    step_stage: Optional[str] = None  # gathering: "first" | "assemble" | "second"
    timer: int = 0
    assemble_size: int = 0
    settled_count: Optional[int] = None  # fewest agents seen here since we stopped moving
    cross_stage: Optional[str] = None  # "back" | "wait"
    cross_skip: bool = False
    notes: list = field(default_factory=list)

    @property
    def steps_away(self) -> int:
        return self.local_map[self.cur].depth if self.local_map is not None else 0

    @property
    def own_pebble_node(self) -> int:
        return self.local_map.root if self.local_map is not None else 0

    @property
    def depth_limit(self) -> int:
        return 2**self.epoch


def initialize(k: int, n: int, delta_const: float, obs: Observation) -> tuple[AgentMemory, Action]:
    mem = AgentMemory(k=k, n=n, delta_const=delta_const, threshold=termination_threshold(n, delta_const))
    mem.local_map = LocalMap(obs.degree)
    mem.prev_obs = obs
    action = Action(PLACE)
    mem.last_action = action
    mem.expect_pebble_delta = 1
    mem.has_second_pebble = True
    return mem, action


def step(memory: AgentMemory, obs: Observation) -> tuple[AgentMemory, Action]:
    mem = copy.deepcopy(memory)
    return mem, advance(mem, obs)


# --------------------------------------------------------------------------
# phase one building blocks


def dfs_next_port(mem: AgentMemory, at_root_start: bool = False) -> Optional[int]:
    """Next DFS port at the current record; None means the epoch is finished."""
    m = mem.local_map
    rec = m[mem.cur]
    if mem.cur == m.root:
        first = 0 if (at_root_start or mem.dfs_last_port is None) else mem.dfs_last_port + 1
        for p in range(first, rec.degree):
            link = rec.links[p]
            if link is None or not m[link[0]].not_cycle:
                return p
        return None
    if rec.depth >= mem.depth_limit:
        return dfs_depth_turnaround(mem)
    p = mem.dfs_last_port
    for _ in range(rec.degree):
        p = (p + 1) % rec.degree
        if p == rec.parent_port:
            return p
        link = rec.links[p]
        if link is None or not m[link[0]].not_cycle:
            return p
    return rec.parent_port


def dfs_depth_turnaround(mem: AgentMemory) -> int:
    rec = mem.local_map[mem.cur]
    if rec.depth < mem.depth_limit:
        raise ProtocolInvariantViolation("turnaround requested below the depth limit")
    return rec.parent_port


def advance_epoch(mem: AgentMemory) -> None:
    if mem.cur != mem.local_map.root:
        raise ProtocolInvariantViolation("epochs only end at the pebble")
    mem.epoch += 1
    clear_pebble_marks(mem)
    mem.dfs_last_port = None
    mem.notes.append({"kind": "epoch", "epoch": mem.epoch})


def clear_pebble_marks(mem: AgentMemory) -> None:
    for rec in mem.local_map.records:
        rec.tmark, rec.tweight, rec.sighted = UNMARKED, 0, -1
    mem.pebbles_found = 0


def extend_map(mem: AgentMemory, port: int, obs: Observation) -> int:
    m = mem.local_map
    link = m.neighbor(mem.cur, port)
    if link is None:
        nxt = m.add_child(mem.cur, port, obs.degree, obs.arrival_port)
    else:
        nxt, q = link
        if m[nxt].degree != obs.degree or q != obs.arrival_port:
            raise DegreeMismatch(f"record {nxt} revisited with degree {obs.degree}/port {obs.arrival_port}")
    mem.cur = nxt
    return nxt


def mark_non_cycle(mem: AgentMemory, start: int) -> list[int]:
    m = mem.local_map
    marked = []
    work = [start]
    while work:
        r = work.pop()
        rec = m[r]
        if rec.not_cycle or m.unmarked_neighbors(r) > 1:
            continue
        rec.not_cycle = True
        for p, link in enumerate(rec.links):
            if link is None or not m[link[0]].not_cycle:
                rec.exit_port = p
        marked.append(r)
        for link in rec.links:
            if link is not None and not m[link[0]].not_cycle:
                work.append(link[0])
    return marked


def record_pebble_sighting(mem: AgentMemory, rec_id: int, pebble_count: int) -> bool:
    """Update T marks at a record; True when a new T mark was placed."""
    rec = mem.local_map[rec_id]
    if rec.tmark == STRUCK_T:
        return False
    if rec.tmark == T_MARK:
        if pebble_count == 0:
            rec.tmark = UNMARKED
            mem.pebbles_found -= rec.tweight
            rec.tweight = 0
        return False
    if pebble_count >= 1:
        rec.tmark = T_MARK
        rec.tweight = pebble_count
        mem.sightings += 1
        rec.sighted = mem.sightings
        mem.pebbles_found += pebble_count
        return True
    return False


def _strike(mem: AgentMemory) -> None:
    for rec in mem.local_map.records:
        if rec.tmark == T_MARK:
            rec.tmark = STRUCK_T
    mem.pebbles_found = 0


def try_cycle_detection(mem: AgentMemory) -> Optional[tuple[list[int], CandidateCycle, list[int]]]:
    """Check whether the T-marked records form a closable line.

    Returns the record path v_0..v_s, the candidate cycle and the expected
    pebble count per position, or None after striking all T marks.
    """
    if mem.pebbles_found < mem.k + 1:
        raise ProtocolInvariantViolation("cycle detection needs k + 1 pebbles")
    m = mem.local_map
    marked = [i for i, r in enumerate(m.records) if r.tmark == T_MARK]

    def farthest(src: int) -> int:
        return max(marked, key=lambda t: (len(m.path(src, t)), -t))

    a = farthest(marked[0])
    b = farthest(a)
    line = m.path(a, b)
    on_line = set(line)
    ok = all(t in on_line for t in marked) and m.root in on_line and len(line) >= 4
    ok = ok and not any(m[r].not_cycle or m[r].tmark == STRUCK_T for r in line)
    if ok:
        if m[a].sighted > m[b].sighted:
            line.reverse()
        v0, vs = line[0], line[-1]
        ok = m[v0].tweight == m[vs].tweight and sum(m[t].tweight for t in marked if t != vs) == mem.k
        ok = ok and m[v0].degree == m[vs].degree
    if not ok:
        _strike(mem)
        mem.notes.append({"kind": "detect_rejected"})
        return None
    s = len(line) - 1
    arrivals, departures, degrees, expected = [], [], [], []
    for i in range(s):
        here = line[i]
        # v_0 and v_s are the same place, so position 0 is entered from v_{s-1}
        into, came_from = (vs, line[s - 1]) if i == 0 else (here, line[i - 1])
        arrivals.append(m.port_between(into, came_from)[0])
        departures.append(m.port_between(here, line[i + 1])[0])
        degrees.append(m[here].degree)
        expected.append(m[here].tweight if m[here].tmark == T_MARK else 0)
    cycle = CandidateCycle(arrivals, departures, degrees, list(expected))
    return line, cycle, expected


# --------------------------------------------------------------------------
# the round dispatcher


def advance(mem: AgentMemory, obs: Observation) -> Action:
    if mem.terminated:
        raise ProtocolInvariantViolation("terminated agents take no steps")
    mem.notes = []
    mem.round += 1
    moved = _settle_last_action(mem, obs)
    mem.still = 0 if moved else mem.still + 1
    action = _termination_checks(mem, obs, moved)
    if action is None:
        if mem.phase == 1:
            action = _phase_one(mem, obs, moved)
        else:
            action = _phase_two(mem, obs, moved)
    mem.prev_prev_count = mem.prev_obs.agent_count if mem.prev_obs is not None else None
    mem.prev_obs = obs
    mem.last_action = action
    mem.expect_pebble_delta = 0
    if action.kind == PLACE:
        mem.expect_pebble_delta = 1
        mem.carrying = False
    elif action.kind == MOVE_CARRY and not mem.carrying:
        mem.expect_pebble_delta = -1
        mem.carrying = True
    if action.kind in (TERMINATE, PLACE_SECOND):
        mem.terminated = True
        if action.kind == PLACE_SECOND:
            mem.has_second_pebble = False
    mem.pending_port = action.port if action.moves else None
    return action


def _settle_last_action(mem: AgentMemory, obs: Observation) -> bool:
    last = mem.last_action
    if last is None or not last.moves:
        return False
    if obs.blocked or obs.arrival_port is None:
        mem.rounds_blocked += 1
        return False
    mem.rounds_blocked = 0
    return True


def _termination_checks(mem: AgentMemory, obs: Observation, moved: bool) -> Optional[Action]:
    if obs.agent_count >= mem.k:
        mem.notes.append({"kind": "terminate", "reason": "all_present"})
        return Action(TERMINATE)
    prev = mem.prev_obs
    quiet = mem.still >= 1 and prev is not None and prev.agent_count == obs.agent_count
    if quiet and mem.still >= 2 and mem.prev_prev_count == obs.agent_count:
        if obs.pebble_count >= prev.pebble_count + mem.expect_pebble_delta + 1:
            mem.notes.append({"kind": "terminate", "reason": "pebble_signal"})
            return Action(TERMINATE)
    if mem.rounds_blocked >= mem.threshold and quiet and mem.last_action is not None and mem.last_action.moves:
        if mem.has_second_pebble and not mem.carrying:
            mem.notes.append({"kind": "terminate", "reason": "blocked_threshold"})
            return Action(PLACE_SECOND)
    return None


# --------------------------------------------------------------------------
# phase one


def _phase_one(mem: AgentMemory, obs: Observation, moved: bool) -> Action:
    m = mem.local_map
    last = mem.last_action
    if mem.vf_stage is not None:
        return _verification(mem, obs, moved)

    if last is not None and last.moves and not moved:
        return last  # blocked: retry the same port

    if moved:
        port = last.port
        prior = mem.cur
        nxt = extend_map(mem, port, obs)
        mem.dfs_last_port = obs.arrival_port
        if last.kind == MOVE_CARRY:
            # dragged pebble: it goes down right here, and the map is re-centred
            m.reroot(nxt)
            clear_pebble_marks(mem)
            mem.dfs_last_port = None
            mem.notes.append({"kind": "pebble_moved", "from_record": prior, "to_record": nxt})
            return Action(PLACE)
        mark_non_cycle(mem, nxt)
        if record_pebble_sighting(mem, nxt, obs.pebble_count) and mem.pebbles_found >= mem.k + 1:
            started = _start_verification(mem)
            if started is not None:
                return started
    elif last is not None and last.kind == PLACE:
        # pebble just placed under us: this record is the DFS root
        mark_non_cycle(mem, mem.cur)
        record_pebble_sighting(mem, mem.cur, obs.pebble_count)

    if mem.cur == m.root:
        if m[m.root].not_cycle:
            return _migrate(mem, obs)
        if m[m.root].tmark == UNMARKED and mem.dfs_last_port is None:
            record_pebble_sighting(mem, m.root, obs.pebble_count)
        port = dfs_next_port(mem)
        if port is None:
            advance_epoch(mem)
            record_pebble_sighting(mem, m.root, obs.pebble_count)
            port = dfs_next_port(mem, at_root_start=True)
            if port is None:
                raise ProtocolInvariantViolation("pebble record has no unmarked port")
        return Action(MOVE, port)
    return Action(MOVE, dfs_next_port(mem))


def _migrate(mem: AgentMemory, obs: Observation) -> Action:
    m = mem.local_map
    if obs.pebble_count < 1:
        raise PebbleMissing("own pebble is not at the pebble record")
    port = m[m.root].exit_port
    if port is None:
        raise ProtocolInvariantViolation("marked pebble record has no way towards the cycle")
    mem.notes.append({"kind": "migrate", "port": port})
    return Action(MOVE_CARRY, port)


def _start_verification(mem: AgentMemory) -> Optional[Action]:
    found = try_cycle_detection(mem)
    if found is None:
        return None
    line, cycle, expected = found
    m = mem.local_map
    vs = line[-1]
    route = m.path(mem.cur, vs)
    mem.vf_approach = [m.port_between(a, b)[0] for a, b in zip(route, route[1:])]
    mem.vf_cycle = cycle
    mem.vf_expected = expected
    mem.vf_trail = []
    mem.vf_index = 0
    mem.vf_observed = [0] * len(cycle)
    mem.vf_origin = (mem.cur, mem.dfs_last_port)
    mem.vf_stage = "approach"
    mem.notes.append({"kind": "detect", "length": len(cycle)})
    return _verification_move(mem, None)


def _verification(mem: AgentMemory, obs: Observation, moved: bool) -> Action:
    last = mem.last_action
    if last is not None and last.moves and not moved:
        return last
    if moved:
        if mem.vf_stage == "approach":
            mem.vf_trail.append((obs.arrival_port, mem.cur))
            mem.cur = mem.local_map.neighbor(mem.cur, last.port)[0]
        elif mem.vf_stage == "walk":
            cyc = mem.vf_cycle
            mem.vf_index += 1
            i = mem.vf_index % len(cyc)
            mem.vf_trail.append((obs.arrival_port, None))
            ok = (
                obs.arrival_port == cyc.arrivals[i]
                and obs.degree == cyc.degrees[i]
                and obs.pebble_count == mem.vf_expected[i]
            )
            mem.vf_observed[i] = obs.pebble_count
            if not ok:
                return _verification_failed(mem)
            if mem.vf_index == len(cyc):
                return _verification_confirmed(mem, obs)
        elif mem.vf_stage == "retreat":
            if mem.vf_back_record is not None:
                mem.cur = mem.vf_back_record
            if not mem.vf_trail:
                return _resume_after_retreat(mem)
    return _verification_move(mem, obs)


def _verification_move(mem: AgentMemory, obs: Optional[Observation]) -> Action:
    if mem.vf_stage == "approach":
        if mem.vf_approach:
            return Action(MOVE, mem.vf_approach.pop(0))
        cyc = mem.vf_cycle
        if mem.local_map[mem.cur].degree != cyc.degrees[0] or cyc.arrivals[0] == cyc.departures[0]:
            return _verification_failed(mem)
        mem.vf_stage = "walk"
        mem.notes.append({"kind": "verify_begin"})
        mem.vf_observed[0] = obs.pebble_count if obs is not None else mem.vf_expected[0]
    if mem.vf_stage == "walk":
        cyc = mem.vf_cycle
        return Action(MOVE, cyc.departures[mem.vf_index % len(cyc)])
    if mem.vf_stage == "retreat":
        port, mem.vf_back_record = mem.vf_trail.pop()
        return Action(MOVE, port)
    raise ProtocolInvariantViolation(f"bad verification stage {mem.vf_stage}")


def _verification_failed(mem: AgentMemory) -> Action:
    mem.notes.append({"kind": "verify_failed"})
    _strike(mem)
    if not mem.vf_trail:
        return _resume_after_retreat(mem)
    mem.vf_stage = "retreat"
    return _verification_move(mem, None)


def _resume_after_retreat(mem: AgentMemory) -> Action:
    origin, last_port = mem.vf_origin
    mem.cur = origin
    mem.dfs_last_port = last_port
    mem.vf_stage = None
    mem.vf_trail = []
    mem.vf_back_record = None
    m = mem.local_map
    if mem.cur == m.root:
        port = dfs_next_port(mem)
        if port is None:
            advance_epoch(mem)
            port = dfs_next_port(mem, at_root_start=True)
        return Action(MOVE, port)
    return Action(MOVE, dfs_next_port(mem))


def _verification_confirmed(mem: AgentMemory, obs: Observation) -> Action:
    cyc = mem.vf_cycle
    cyc.weights = list(mem.vf_observed)
    mem.notes.append({"kind": "verify_confirmed", "length": len(cyc)})
    mem.vf_stage = None
    mem.phase = 2
    mem.candidate_cycle = cyc
    mem.pos = 0
    mem.data_round = mem.round - len(cyc)
    mem.notes.append({"kind": "phase2"})
    if _elect(mem):
        _enter_gathering(mem)
    else:
        _enter_walking(mem)
    return _phase_two_move(mem, obs)


# --------------------------------------------------------------------------
# phase two


def _reduce_cycle(mem: AgentMemory) -> None:
    """Fold a candidate that wraps the cycle several times onto one lap."""
    cyc = mem.candidate_cycle
    total = sum(cyc.weights)
    if total <= 0 or total % mem.k:
        return
    laps = total // mem.k
    size = len(cyc)
    if laps < 2 or size % laps:
        return
    period = size // laps
    for i in range(size):
        j = (i + period) % size
        if cyc.key(i, 1) != cyc.key(j, 1):
            return
    mem.candidate_cycle = CandidateCycle(
        cyc.arrivals[:period], cyc.departures[:period], cyc.degrees[:period], cyc.weights[:period]
    )
    mem.pos %= period
    if mem.elected_offset is not None:
        mem.elected_offset %= period
    mem.notes.append({"kind": "cycle_folded", "length": period})


def _ports_to(mem: AgentMemory, target: int) -> list[int]:
    cyc = mem.candidate_cycle
    size = len(cyc)
    ports = []
    i = mem.pos
    while i != target:
        ports.append(cyc.departures[i])
        i = (i + 1) % size
    return ports


def _elect(mem: AgentMemory) -> bool:
    _reduce_cycle(mem)
    cyc = mem.candidate_cycle
    if sum(cyc.weights) != mem.k:
        return False
    u = elect_meeting_node(cyc, mem.k)
    if u is None:
        mem.notes.append({"kind": "elect_failed"})
        return False
    mem.elected_offset = u
    mem.cw = clockwise_sign(cyc, u)
    mem.notes.append({"kind": "elect", "ports": _ports_to(mem, u), "data_round": mem.data_round})
    return True


def _enter_walking(mem: AgentMemory) -> None:
    mem.state = "walking"
    mem.step_stage = None
    mem.pebbles_found = 0
    mem.direction = -mem.cw if mem.elected_offset is not None else 1
    mem.lap_moves = 0
    mem.lap_start_round = mem.round
    mem.candidate_cycle.weights[mem.pos] = mem.prev_obs.pebble_count if mem.prev_obs else 0
    mem.notes.append({"kind": "walking"})


def _enter_gathering(mem: AgentMemory) -> None:
    mem.state = "gathering"
    mem.step_stage = "first"
    mem.timer = 2 * mem.n
    mem.settled_count = None
    mem.notes.append({"kind": "gathering", "ports": _ports_to(mem, mem.elected_offset)})


def _shortest_direction(mem: AgentMemory) -> int:
    size = len(mem.candidate_cycle)
    fwd = (mem.elected_offset - mem.pos) % size
    back = size - fwd
    if fwd < back:
        return 1
    if back < fwd:
        return -1
    return mem.cw


def _phase_two(mem: AgentMemory, obs: Observation, moved: bool) -> Action:
    cyc = mem.candidate_cycle
    last = mem.last_action
    if moved:
        d = mem.direction
        mem.pos = (mem.pos + d) % len(cyc)
        if obs.arrival_port != cyc.expected_arrival(mem.pos, d) or obs.degree != cyc.degrees[mem.pos]:
            raise ProtocolInvariantViolation(
                f"candidate cycle disagrees with the graph at position {mem.pos}"
            )
    blocked = last is not None and last.moves and not moved
    arrived_company = (
        mem.prev_obs is not None and not moved and obs.agent_count > mem.prev_obs.agent_count
    )
    left_company = (
        mem.prev_obs is not None and not moved and obs.agent_count < mem.prev_obs.agent_count
    )

    # crossing: the clockwise mover steps back, the other waits one round, and
    # neither reacts to a crossing on the traversal right after
    crossed = obs.crossed and moved and not mem.cross_skip
    if moved:
        mem.cross_skip = False
    grouping = mem.state == "walking" or mem.step_stage == "second"
    if mem.cross_stage == "back":
        if not moved:
            return last
        mem.cross_stage = None
        mem.direction = -mem.direction
        mem.cross_skip = True
    elif mem.cross_stage == "wait":
        mem.cross_stage = None
        mem.cross_skip = True
    elif crossed and grouping:
        _tick(mem, moved)
        if mem.direction == mem.cw:
            mem.cross_stage = "back"
            mem.direction = -mem.direction
            return _phase_two_move(mem, obs)
        mem.cross_stage = "wait"
        return Action(STAY)

    if mem.state == "walking":
        if moved:
            mem.lap_moves += 1
            cyc.weights[mem.pos] = obs.pebble_count
            if mem.lap_moves >= len(cyc):
                mem.data_round = mem.lap_start_round
                if _elect(mem):
                    _enter_gathering(mem)
                    return _gathering(mem, obs, moved, arrived_company, left_company)
                mem.lap_moves = 0
                mem.lap_start_round = mem.round
                mem.pebbles_found = 0
            elif (
                mem.elected_offset is not None
                and mem.pos == mem.elected_offset
                and obs.agent_count > 1
            ):
                _enter_gathering(mem)
                return Action(STAY)
        return _phase_two_move(mem, obs)
    return _gathering(mem, obs, moved, arrived_company, left_company)


def _tick(mem: AgentMemory, moved: bool) -> None:
    if mem.state == "gathering" and mem.timer > 0:
        mem.timer -= 1


def _gathering(mem: AgentMemory, obs: Observation, moved: bool, arrived: bool, left: bool) -> Action:
    u = mem.elected_offset
    if mem.step_stage == "first":
        mem.timer -= 1
        if moved or mem.settled_count is None:
            mem.settled_count = obs.agent_count
        elif obs.agent_count < mem.settled_count:
            # someone who was here all along ended their first step: go with them
            mem.assemble_size = mem.settled_count
            return _start_second_step(mem)
        if mem.timer <= 0:
            mem.assemble_size = obs.agent_count
            return _start_second_step(mem)
        if mem.pos == u:
            return Action(STAY)
        mem.direction = _shortest_direction(mem)
        return _phase_two_move(mem, obs)
    if mem.step_stage == "assemble":
        mem.timer -= 1
        if obs.agent_count >= mem.assemble_size or mem.timer <= 0:
            mem.step_stage = "second"
            mem.timer = mem.n
            return _phase_two_move(mem, obs)
        return Action(STAY)
    if mem.step_stage == "second":
        # a blocked group holds its ground until the edge returns or the threshold fires
        if not obs.blocked:
            mem.timer -= 1
        if mem.timer <= 0:
            _enter_walking(mem)
        return _phase_two_move(mem, obs)
    raise ProtocolInvariantViolation(f"bad gathering stage {mem.step_stage}")


def _start_second_step(mem: AgentMemory) -> Action:
    mem.direction = mem.cw if mem.pos == mem.elected_offset else -mem.cw
    mem.settled_count = None
    mem.step_stage = "assemble"
    mem.timer = mem.n
    mem.notes.append({"kind": "second_step", "direction": "cw" if mem.direction == mem.cw else "ccw"})
    return Action(MOVE, mem.candidate_cycle.port_towards(mem.pos, mem.direction))


def _phase_two_move(mem: AgentMemory, obs: Observation) -> Action:
    if mem.state == "gathering" and mem.step_stage == "first" and mem.pos == mem.elected_offset:
        return Action(STAY)
    return Action(MOVE, mem.candidate_cycle.port_towards(mem.pos, mem.direction))
