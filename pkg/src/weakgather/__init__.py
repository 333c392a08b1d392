"""Simulator and verification harness for weak gathering on dynamic unicyclic graphs."""

from .graph import PortLabeledGraph, build_graph, generate_unicyclic, generate_multicyclic, analyze, load_fixture
from .engine import run_until, RunReport, WorldState
from .verification import weak_gathering_achieved, check_round_bound, monitor_run

__all__ = [
    "PortLabeledGraph",
    "build_graph",
    "generate_unicyclic",
    "generate_multicyclic",
    "analyze",
    "load_fixture",
    "run_until",
    "RunReport",
    "WorldState",
    "weak_gathering_achieved",
    "check_round_bound",
    "monitor_run",
]
