"""Command-line entry point: single runs, seeded batches and trace verification.

Settings come from an optional ``key = value`` config file, then from flags.
Exit codes: 0 success, 1 the run (or a monitor) failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .engine import Simulation, TraceEvent, choose_starts
from .graph import GraphError, PortLabeledGraph, analyze, generate_multicyclic, generate_unicyclic, load_fixture
from .scheduler import STRATEGIES, InvalidStrategyForTopology, make_scheduler
from .verification import (
    MalformedTrace,
    RunMonitor,
    check_round_bound,
    monitor_run,
    pebble_bound,
    tree_size,
    worst_case_pebble_bound,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run or batch depends on. ``horizon = 0`` means 2 * S(n)."""

    graph: str = ""  # fixture path
    gen_unicyclic: str = ""  # "n,cycle_len"
    gen_bicyclic: str = ""  # "variant,n" or "variant,n,c1,c2,joint"
    graph_seed: int = 0
    k: int = 2
    starts: str = ""  # explicit "a,b,..." overrides agent_seed
    agent_seed: int = 0
    scheduler: str = "always_full"
    scheduler_seed: int = 0
    targets: str = ""  # "a,b" for the separators
    delta: float = 4.0
    epsilon: float = 2.0
    slack: float = 1.0
    horizon: int = 0
    trace: str = ""
    report_dir: str = ""
    batch: int = 0
    seed_start: int = 0

    def validate(self) -> None:
        sources = [bool(self.graph), bool(self.gen_unicyclic), bool(self.gen_bicyclic)]
        if sum(sources) != 1:
            raise ConfigError("give exactly one of graph, gen_unicyclic, gen_bicyclic")
        if self.scheduler not in STRATEGIES:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.k < 1:
            raise ConfigError("k must be positive")
        if self.batch < 0 or self.horizon < 0:
            raise ConfigError("batch and horizon must be non-negative")
        if self.delta <= 0 or self.epsilon < 0 or self.slack <= 0:
            raise ConfigError("delta and slack must be positive, epsilon non-negative")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = type(getattr(ExperimentConfig(), name))
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return ExperimentConfig(**values)


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{name} = {getattr(cfg, name)}\n" for name in _FIELDS)


def _ints(text: str, what: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None


# --------------------------------------------------------------------------
# building blocks


def build_instance(cfg: ExperimentConfig, seed: int) -> PortLabeledGraph:
    if cfg.graph:
        return load_fixture(cfg.graph)
    if cfg.gen_unicyclic:
        parts = _ints(cfg.gen_unicyclic, "gen_unicyclic")
        if len(parts) != 2:
            raise ConfigError("gen_unicyclic wants n,cycle_len")
        return generate_unicyclic(parts[0], parts[1], seed)
    variant, *rest = cfg.gen_bicyclic.split(",")
    nums = _ints(",".join(rest), "gen_bicyclic")
    if len(nums) not in (1, 4):
        raise ConfigError("gen_bicyclic wants variant,n or variant,n,c1,c2,joint")
    if len(nums) == 1:
        return generate_multicyclic(nums[0], variant.strip(), seed=seed)
    n, c1, c2, joint = nums
    return generate_multicyclic(n, variant.strip(), c1, c2, joint, seed=seed)


def _horizon(cfg: ExperimentConfig, n: int) -> int:
    return cfg.horizon or int(2 * worst_case_pebble_bound(n, cfg.delta, cfg.epsilon))


class _BlockedStreaks:
    """Longest run of consecutive blocked rounds, per agent, read off the trace."""

    def __init__(self):
        self.current: dict[str, int] = {}
        self.longest = 0

    def __call__(self, ev: TraceEvent) -> None:
        if ev.kind == "blocked":
            self.current[ev.entity] = self.current.get(ev.entity, 0) + 1
            self.longest = max(self.longest, self.current[ev.entity])
        elif ev.kind == "move":
            self.current[ev.entity] = 0


def run_once(cfg: ExperimentConfig, seed: int, trace_path: Optional[str] = None) -> dict:
    """One simulation with monitors attached; returns a flat summary row."""
    graph = build_instance(cfg, cfg.graph_seed + seed)
    topo = analyze(graph)
    if cfg.k > graph.n:
        raise ConfigError(f"k={cfg.k} exceeds n={graph.n}")
    if cfg.starts:
        starts = _ints(cfg.starts, "starts")
        if len(starts) != cfg.k or len(set(starts)) != cfg.k or not all(0 <= s < graph.n for s in starts):
            raise ConfigError("starts must be k distinct node ids")
    else:
        starts = choose_starts(graph, cfg.k, cfg.agent_seed + seed)
    targets = tuple(_ints(cfg.targets, "targets")) or None
    if targets is not None and len(targets) != 2:
        raise ConfigError("targets wants exactly two agent ids")
    scheduler = make_scheduler(cfg.scheduler, cfg.scheduler_seed + seed, targets)

    monitor = RunMonitor(graph, topo)
    streaks = _BlockedStreaks()
    sinks = [monitor.consume, streaks]
    handle = open(trace_path, "w") if trace_path else None
    if handle:
        sinks.append(lambda ev: handle.write(ev.to_json() + "\n"))
    try:
        sim = Simulation(graph, starts, scheduler, delta=cfg.delta, sinks=sinks, topo=topo)
        report = sim.run_until(_horizon(cfg, graph.n))
    finally:
        if handle:
            handle.close()
    mon = monitor.finish()

    cycle_len = len(topo.cycle_nodes)
    bounds = []
    within = True
    if topo.kind == "unicyclic":
        for start, arrival in zip(starts, report.pebble_cycle_arrival):
            size = tree_size(graph, topo, start)
            bounds.append(pebble_bound(graph.n, cycle_len, size, cfg.delta, cfg.epsilon))
            if arrival is not None and not check_round_bound(
                graph.n, arrival, "pebble_bound", cfg.slack,
                cycle_len=cycle_len, tree_nodes=size, delta=cfg.delta, epsilon=cfg.epsilon,
            ):
                within = False
    return {
        "seed": seed,
        "n": graph.n,
        "cycle_len": cycle_len,
        "k": cfg.k,
        "scheduler": cfg.scheduler,
        "outcome": report.outcome,
        "final_round": report.final_round,
        "gather_round": report.final_round if report.gathered else None,
        "all_terminated": report.all_terminated,
        "max_blocked": streaks.longest,
        "handshakes": report.handshakes,
        "arrivals": list(report.pebble_cycle_arrival),
        "arrival_bounds": bounds,
        "within_bound": within,
        "monitors_ok": mon.ok,
        "monitor_report": mon,
        "ok": report.gathered and report.all_terminated and mon.ok,
    }


# --------------------------------------------------------------------------
# commands

ROW_COLUMNS = ("seed", "n", "cycle_len", "k", "scheduler", "outcome", "final_round", "gather_round",
               "max_blocked", "handshakes", "arrivals", "within_bound", "monitors_ok")


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, list):
        return ",".join("-" if v is None else str(v) for v in value)
    return str(value)


def format_rows(rows: list[dict]) -> str:
    lines = ["\t".join(ROW_COLUMNS)]
    lines += ["\t".join(_cell(row[c]) for c in ROW_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"


def format_aggregate(rows: list[dict]) -> str:
    finals = [row["final_round"] for row in rows]
    gathered = sum(1 for row in rows if row["gather_round"] is not None)
    ok = sum(1 for row in rows if row["ok"])
    lines = [
        f"runs\t{len(rows)}",
        f"gathered\t{gathered}",
        f"ok\t{ok}",
        f"max_final_round\t{max(finals) if finals else '-'}",
        f"median_final_round\t{statistics.median(finals) if finals else '-'}",
    ]
    return "\n".join(lines) + "\n"


def cmd_run(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    row = run_once(cfg, 0, cfg.trace or None)
    out.write("=== run ===\n")
    out.write(row["monitor_report"].render().rstrip("\n") + "\n")
    out.write(f"gather_round\t{_cell(row['gather_round'])}\n")
    out.write(f"max_blocked\t{row['max_blocked']}\n")
    out.write(f"pebble_arrivals\t{_cell(row['arrivals'])}\n")
    out.write(f"within_bound\t{row['within_bound']}\n")
    out.write("=== end ===\n")
    _figures(cfg, [row], out)
    return 0 if row["ok"] else 1


def cmd_batch(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    rows = [run_once(cfg, cfg.seed_start + i) for i in range(cfg.batch)]
    out.write("=== batch ===\n")
    out.write(format_rows(rows))
    out.write("=== aggregate ===\n")
    out.write(format_aggregate(rows))
    out.write("=== end ===\n")
    if cfg.report_dir:
        Path(cfg.report_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.report_dir) / "summary.tsv").write_text(format_rows(rows))
    _figures(cfg, rows, out)
    return 0 if all(row["ok"] for row in rows) else 1


def _figures(cfg: ExperimentConfig, rows: list[dict], out) -> None:
    if not cfg.report_dir:
        return
    from .plotting import save_report_figures

    for path in save_report_figures(rows, cfg.report_dir):
        out.write(f"figure\t{path}\n")


def read_trace(path: str) -> list[TraceEvent]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedTrace(str(exc)) from exc
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            events.append(TraceEvent.from_json(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedTrace(f"line {lineno}: {exc}") from exc
    return events


def cmd_verify(cfg: ExperimentConfig, trace_path: str, out=None) -> int:
    out = out or sys.stdout
    graph = build_instance(cfg, cfg.graph_seed)
    report = monitor_run(read_trace(trace_path), graph)
    out.write("=== verify ===\n")
    out.write(report.render().rstrip("\n") + "\n")
    out.write("=== end ===\n")
    return 0 if report.ok else 1


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakgather", description="Weak gathering on unicyclic graphs under adversarial edge removal.")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--graph", help="fixture file")
    p.add_argument("--gen-unicyclic", metavar="N,C")
    p.add_argument("--gen-bicyclic", metavar="VARIANT,N[,C1,C2,JOINT]")
    p.add_argument("--graph-seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--starts", metavar="A,B,...")
    p.add_argument("--agent-seed", type=int)
    p.add_argument("--scheduler", choices=sorted(STRATEGIES))
    p.add_argument("--scheduler-seed", type=int)
    p.add_argument("--targets", metavar="A,B")
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--slack", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--trace", help="write the JSON-lines trace here (single runs)")
    p.add_argument("--report-dir", help="write summary.tsv and figures here")
    p.add_argument("--batch", type=int, help="run this many seeds")
    p.add_argument("--seed-start", type=int)
    p.add_argument("--verify", metavar="TRACE", help="re-check a stored trace against the graph")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        try:
            cfg = parse_config(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
    overrides = {name: getattr(args, name) for name in _FIELDS if getattr(args, name, None) is not None}
    return replace(cfg, **overrides)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.validate()
        if args.dump_config:
            sys.stdout.write(format_config(cfg))
            return 0
        if args.verify:
            return cmd_verify(cfg, args.verify)
        if cfg.batch or args.batch is not None:
            return cmd_batch(cfg)
        return cmd_run(cfg)
    except (ConfigError, GraphError, MalformedTrace, InvalidStrategyForTopology) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
