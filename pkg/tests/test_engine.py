import json

import pytest

from weakgather import engine as E
from weakgather import protocol as P
from weakgather.engine import (
    DisconnectedMask,
    IllegalPort,
    PebbleBudgetExceeded,
    Simulation,
    TraceEvent,
    WorldState,
    choose_starts,
    gathering_outcome,
)
from weakgather.graph import EdgeMask, build_graph, full_mask, generate_unicyclic
from weakgather.scheduler import AlwaysFull, GreedyBlocker, RandomSingleRemoval, Scheduler


def ring(n):
    return build_graph([(i, (i + 1) % n) for i in range(n)], seed=1)


def port_to(g, u, w):
    return next(p for p in range(g.degree(u)) if g.follow(u, p).neighbor == w)


class Scripted:
    """Stand-in agent memory that replays a fixed list of actions."""

    def __init__(self, actions):
        self.actions = list(actions)
        self.notes = []
        self.seen = []


@pytest.fixture
def scripted(monkeypatch):
    """Replace the protocol with per-agent scripts; returns a setter."""
    scripts = {}

    def init(k, n, delta, obs):
        mem = Scripted(scripts.pop(next(iter(scripts))))
        mem.seen.append(obs)
        return mem, mem.actions.pop(0)

    def adv(mem, obs):
        mem.seen.append(obs)
        return mem.actions.pop(0) if mem.actions else P.Action(P.STAY)

    monkeypatch.setattr(E.P, "initialize", init)
    monkeypatch.setattr(E.P, "advance", adv)
    return scripts


class FixedMask(Scheduler):
    kind = "fixed"

    def __init__(self, removed=()):
        self.removed = frozenset(removed)

    def next_mask(self, world, intents, memories=None):
        return EdgeMask(frozenset(range(self.graph.edge_count)) - self.removed)


# -- world state ------------------------------------------------------------


def test_initial_world():
    g = ring(5)
    w = WorldState.initial(g, [0, 3])
    assert w.k == 2 and w.round == 0
    assert w.carried_pebbles == [2, 2]
    assert sum(w.pebble_count) == 0
    assert w.live() == [0, 1]


@pytest.mark.parametrize("starts", [[0, 0], [0, 9], [-1, 2]])
def test_initial_world_rejects_bad_starts(starts):
    with pytest.raises(ValueError):
        WorldState.initial(ring(5), starts)


def test_gathering_outcome():
    g = ring(6)
    assert gathering_outcome(g, [2, 2, 2]) == "gathered_node"
    assert gathering_outcome(g, [2, 3, 2]) == "gathered_edge"
    assert gathering_outcome(g, [2, 4]) is None
    assert gathering_outcome(g, [1, 2, 3]) is None


def test_choose_starts_is_seeded_and_distinct():
    g = generate_unicyclic(12, 5, 0)
    a = choose_starts(g, 4, 3)
    assert a == choose_starts(g, 4, 3)
    assert len(set(a)) == 4
    with pytest.raises(ValueError):
        choose_starts(g, 13, 0)


# -- movement with scripted agents -------------------------------------------


def test_swap_along_an_edge_sets_crossed(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 0, 1))]
    scripted[1] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 1, 0))]
    events = []
    sim = Simulation(g, [0, 1], AlwaysFull(), sinks=[events.append])
    sim.run_round()
    sim.run_round()
    assert sim.world.agent_position == [1, 0]
    assert sim.world.crossed == [True, True]
    assert any(e.kind == "crossed" for e in events)
    # the next observation carries the flag
    sim.run_round()
    assert sim.memories[0].seen[-1].crossed


def test_same_direction_is_not_a_crossing(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 0, 1))]
    scripted[1] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 1, 2))]
    sim = Simulation(g, [0, 1], AlwaysFull())
    sim.run_round()
    sim.run_round()
    assert sim.world.agent_position == [1, 2]
    assert sim.world.crossed == [False, False]


def test_blocked_agent_stays_and_is_told(scripted):
    g = ring(5)
    e = g.edge_between(0, 1)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 0, 1))]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 3], FixedMask([e]))
    sim.run_round()
    sim.run_round()
    assert sim.world.agent_position == [0, 3]
    assert sim.world.blocked == [True, False]
    assert sim.world.arrival_port[0] is None
    sim.run_round()
    assert sim.memories[0].seen[-1].blocked
    assert not sim.memories[0].seen[-1].crossed


def test_arrival_port_is_the_reverse_port(scripted):
    g = ring(5)
    p = port_to(g, 0, 4)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE, p)]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 2], AlwaysFull())
    sim.run_round()
    sim.run_round()
    assert sim.world.arrival_port[0] == g.follow(0, p).reverse_port


def test_carry_picks_up_at_the_origin(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE_CARRY, port_to(g, 0, 1)), P.Action(P.PLACE)]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 3], AlwaysFull())
    for _ in range(3):
        sim.run_round()
    assert sim.world.pebble_count[0] == 0
    assert sim.world.pebble_count[1] == 1
    assert sim.world.first_pebble[0] == 1


def test_second_pebble_terminates(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.PLACE_SECOND)]
    scripted[1] = [P.Action(P.PLACE), P.Action(P.TERMINATE)]
    sim = Simulation(g, [0, 1], AlwaysFull())
    report = sim.run_until(10)
    assert report.terminated == [True, True]
    assert report.outcome == "gathered_edge"
    assert report.handshakes == 1
    assert sim.world.pebble_count[0] == 2


def test_terminated_apart(scripted):
    g = ring(6)
    scripted[0] = [P.Action(P.TERMINATE)]
    scripted[1] = [P.Action(P.TERMINATE)]
    assert Simulation(g, [0, 3], AlwaysFull()).run_until(5).outcome == "terminated_apart"


def test_horizon_exhausted(scripted):
    g = ring(6)
    scripted[0] = [P.Action(P.PLACE)]
    scripted[1] = [P.Action(P.PLACE)]
    report = Simulation(g, [0, 3], AlwaysFull()).run_until(7)
    assert report.outcome == "horizon_exhausted"
    assert report.final_round == 7


# -- errors -----------------------------------------------------------------


def test_placing_twice_exceeds_the_budget(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.PLACE)]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 3], AlwaysFull())
    sim.run_round()
    with pytest.raises(PebbleBudgetExceeded):
        sim.run_round()


def test_second_pebble_before_first(scripted):
    scripted[0] = [P.Action(P.PLACE_SECOND)]
    scripted[1] = [P.Action(P.PLACE)]
    with pytest.raises(PebbleBudgetExceeded):
        Simulation(ring(5), [0, 3], AlwaysFull()).run_round()


def test_carry_from_an_empty_node(scripted):
    g = ring(5)
    scripted[0] = [P.Action(P.PLACE), P.Action(P.MOVE, port_to(g, 0, 1)), P.Action(P.MOVE_CARRY, port_to(g, 1, 2))]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 3], AlwaysFull())
    sim.run_round()
    sim.run_round()
    with pytest.raises(PebbleBudgetExceeded):
        sim.run_round()


def test_illegal_port(scripted):
    scripted[0] = [P.Action(P.MOVE, 7)]
    scripted[1] = [P.Action(P.PLACE)]
    with pytest.raises(IllegalPort):
        Simulation(ring(5), [0, 3], AlwaysFull()).run_round()


def test_disconnecting_scheduler_is_caught(scripted):
    g = ring(6)
    scripted[0] = [P.Action(P.PLACE)]
    scripted[1] = [P.Action(P.PLACE)]
    sim = Simulation(g, [0, 3], FixedMask([g.edge_between(0, 1), g.edge_between(3, 4)]))
    with pytest.raises(DisconnectedMask):
        sim.run_round()


def test_bad_horizon():
    with pytest.raises(ValueError):
        Simulation(ring(5), [0, 2], AlwaysFull()).run_until(0)


# -- real protocol runs ------------------------------------------------------


def test_two_agents_on_a_ring_gather():
    report = Simulation(ring(6), [0, 3], AlwaysFull()).run_until(20000)
    assert report.gathered
    assert report.all_terminated


def test_trace_json_round_trip():
    g = generate_unicyclic(9, 4, 1)
    events = []
    Simulation(g, choose_starts(g, 3, 1), GreedyBlocker(), sinks=[events.append], verbose=True).run_until(400)
    assert events
    for ev in events:
        line = ev.to_json()
        assert TraceEvent.from_json(line) == ev
        json.loads(line)
    rounds = [ev.round for ev in events]
    assert rounds == sorted(rounds)


def trace_lines(seed):
    g = generate_unicyclic(10, 5, seed)
    lines = []
    sim = Simulation(g, choose_starts(g, 3, seed), RandomSingleRemoval(seed), sinks=[lambda e: lines.append(e.to_json())])
    report = sim.run_until(3000)
    return lines, report


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_runs_are_deterministic(seed):
    a, ra = trace_lines(seed)
    b, rb = trace_lines(seed)
    assert a == b
    assert ra == rb


def test_pebbles_are_conserved_every_round():
    g = generate_unicyclic(11, 4, 5)
    sim = Simulation(g, choose_starts(g, 4, 5), RandomSingleRemoval(2))
    while sim.world.round < 2000 and sim.world.live():
        sim.run_round()
        assert sum(sim.world.pebble_count) + sum(sim.world.carried_pebbles) == 8
        assert all(0 <= c <= 2 for c in sim.world.carried_pebbles)


def test_full_mask_every_round_under_always_full():
    g = generate_unicyclic(8, 3, 0)
    sim = Simulation(g, [0, 4], AlwaysFull())
    sim.run_round()
    assert sim.world.current_mask == full_mask(g)
