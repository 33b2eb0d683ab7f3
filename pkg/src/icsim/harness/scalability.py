"""Prompt size as the continuum grows.

Synthetic topologies of n hosts are generated from a seeded RNG: hosts hang
off ceil(n / HOSTS_PER_SWITCH) switches joined by a random spanning tree plus
a few chords, the four-pod chain is placed on random workers and the
monitoring section is filled with random utilizations. The snapshot goes
through the same prompt builder the intent loop uses.
"""

from __future__ import annotations

import csv
import json
import math
import random
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from ..actuator import recompute_all_routes
from ..decision import LLMDecider, Request
from ..decision.prompt import build_prompt, load_few_shot
from ..model import ContinuumTopology, DeploymentState, Link, Node, PodSpec, snapshot
from ..telemetry import Sample, aggregate

HOSTS_PER_SWITCH = 4
CHORD_FRACTION = 0.25
DEFAULT_NODES = (10, 50, 100, 200, 300, 400, 500, 600)
POD_CHAIN = (("p1", 0.3, 312.0), ("p2", 0.3, 312.0), ("p3", 0.5, 512.0), ("p4", 0.3, 312.0))


def synthetic_topology(n_nodes: int, rng: random.Random) -> ContinuumTopology:
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    n_sw = max(2, math.ceil(n_nodes / HOSTS_PER_SWITCH))
    switches = [f"S{i + 1}" for i in range(n_sw)]
    pairs = set()
    for i in range(1, n_sw):
        j = rng.randrange(i)
        pairs.add((switches[j], switches[i]))
    for _ in range(int(CHORD_FRACTION * n_sw)):
        a, b = rng.sample(switches, 2)
        pairs.add((a, b) if (b, a) not in pairs else (b, a))
    links = [Link(a, b, 100.0, 0.001) for a, b in sorted(pairs)]
    nodes = [Node("M", 32.0, 65536.0, switches[0], schedulable=False)]
    for i in range(1, n_nodes):
        nodes.append(Node(f"W{i}", float(rng.choice((2, 4, 8))), float(rng.choice((4096, 8192))),
                          rng.choice(switches)))
    return ContinuumTopology(nodes, switches, links, "M")


def synthetic_state(topology: ContinuumTopology, rng: random.Random) -> DeploymentState:
    workers = [n.id for n in topology.nodes if n.schedulable]
    pods = [PodSpec(pid, i, cpu, mem, 0.05) for i, (pid, cpu, mem) in enumerate(POD_CHAIN)]
    placement = {p.id: rng.choice(workers) for p in pods}
    return recompute_all_routes(DeploymentState.initial(pods, placement), topology)


def synthetic_samples(topology: ContinuumTopology, state: DeploymentState, seconds: int,
                      rng: random.Random) -> list[Sample]:
    # hosts without replicas idle at zero, as in the simulator
    busy = {r.node_id for reps in state.replicas.values() for r in reps}
    out = []
    for t in range(seconds):
        out.append(Sample(
            t=float(t),
            rts=[rng.uniform(1.5, 3.5) for _ in range(rng.randint(3, 6))],
            pods={p: {"cpu_utilization": rng.random(), "mem_used": rng.uniform(100.0, 300.0), "replicas": 1.0}
                  for p in state.chain()},
            nodes={n.id: {"cpu_utilization": rng.random() * 0.05 if n.id in busy else 0.0}
                   for n in topology.nodes},
            links={l.name: {"utilization": rng.random(), "up": 1.0} for l in topology.links},
        ))
    return out


@dataclass
class ScalePoint:
    nodes: int
    switches: int
    links: int
    prompt_chars: int
    tokens_estimated: int
    tokens_in: int | None = None
    tokens_out: int | None = None
    wall_latency: float | None = None


def measure(n_nodes: int, seed: int = 1, live: LLMDecider | None = None,
            window_len: float = 10.0, k_pre: int = 3) -> ScalePoint:
    rng = random.Random(f"{seed}:{n_nodes}")
    topo = synthetic_topology(n_nodes, rng)
    state = synthetic_state(topo, rng)
    horizon = int(window_len * (k_pre + 1))
    samples = synthetic_samples(topo, state, horizon, rng)
    agg = aggregate(samples, window_len, k_pre, float(horizon), history_start=0.0)
    violation = {"direction": "upper", "time": float(horizon), "ema": 3.1}
    intent = {"upper_threshold": 3.0, "lower_threshold": 1.0, "waiting_time": 60.0}
    snap = snapshot(state, topo, agg.to_dict(), intent, violation)
    prompt = build_prompt(snap, few_shot_library=load_few_shot())
    point = ScalePoint(n_nodes, len(topo.switches), len(topo.links), len(prompt.text()), prompt.token_estimate)
    if live is not None:
        t0 = time.perf_counter()
        reply = live.decide(Request(0, snap, prompt))
        point.wall_latency = reply.wall_latency if reply.wall_latency is not None else time.perf_counter() - t0
        point.tokens_in, point.tokens_out = reply.tokens_in, reply.tokens_out
    return point


def linear_fit(xs: list[float], ys: list[float]) -> dict:
    slope, intercept = statistics.linear_regression(xs, ys)
    r2 = statistics.correlation(xs, ys) ** 2 if len(xs) > 2 else 1.0
    return {"slope": slope, "intercept": intercept, "r2": r2}


def run_scale(node_counts: list[int], out_dir: str | Path, seed: int = 1, live: bool = False) -> dict:
    counts = sorted(set(node_counts))
    if len(counts) < 2:
        raise ValueError("scale needs at least two distinct node counts")
    decider = LLMDecider() if live else None
    points = [measure(n, seed, decider) for n in counts]
    fit = linear_fit([float(p.nodes) for p in points], [float(p.tokens_estimated) for p in points])
    result = {
        "seed": seed,
        "live": live,
        "points": [asdict(p) for p in points],
        "fit": fit,
        "strictly_increasing": all(a.tokens_estimated < b.tokens_estimated for a, b in zip(points, points[1:])),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "scale.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(points[0])), lineterminator="\n")
        w.writeheader()
        w.writerows(asdict(p) for p in points)
    (out / "scale.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result
