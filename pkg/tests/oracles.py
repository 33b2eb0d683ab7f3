"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math
import random

from icsim.model import ContinuumTopology, Link, Node, link_key


def all_simple_paths(topology: ContinuumTopology, src: str, dst: str, avoid=()) -> list[list[str]]:
    banned = {link_key(*l) for l in avoid}
    adj: dict[str, list[str]] = {s: [] for s in topology.switches}
    for l in topology.links:
        if l.up and l.key not in banned:
            adj[l.endpoint_a].append(l.endpoint_b)
            adj[l.endpoint_b].append(l.endpoint_a)
    out = []

    def walk(path):
        if path[-1] == dst:
            out.append(list(path))
            return
        for n in adj[path[-1]]:
            if n not in path:
                path.append(n)
                walk(path)
                path.pop()

    walk([src])
    return out


def brute_route(topology, src, dst, utils=None, avoid=()):
    """Minimum of (max link utilization, hops, switch sequence) over every simple path."""
    utils = utils or {}

    def key(p):
        u = max((utils.get("-".join(link_key(a, b)), 0.0) for a, b in zip(p, p[1:])), default=0.0)
        return (u, len(p) - 1, tuple(p))

    paths = all_simple_paths(topology, src, dst, avoid)
    return min(paths, key=key) if paths else None


def random_switch_graph(rng: random.Random, n: int, p_edge: float = 0.4) -> tuple[ContinuumTopology, dict]:
    switches = [f"S{i}" for i in range(1, n + 1)]
    links = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                links.append(Link(switches[i], switches[j], 100.0, 0.001, up=rng.random() > 0.1))
    nodes = [Node("H", 1, 1, switches[0])]
    utils = {l.name: rng.choice((0.0, 0.2, 0.5, 0.5, 0.9, 0.95)) for l in links}
    return ContinuumTopology(nodes, switches, links, "H"), utils


def ema_loop(values, alpha, v0):
    v = v0
    for x in values:
        v = (1 - alpha) * v + alpha * x
    return v


def ema_closed_constant(rt, alpha, n):
    return rt * (1 - (1 - alpha) ** n)


def detection_timeline(trace, upper=3.0, lower=1.0, alpha=0.02, waiting=60.0, latency=0.0, min_requests=5):
    """Hand-rolled watch loop: (time, kind) events for (time, rt) completions.

    Mirrors the control rules in plain code: EMA seeded by the first value,
    strict threshold comparison, no trigger while a decision is in flight or
    during the waiting window that starts when the decision lands.
    """
    events = []
    v, n = None, 0
    in_flight_until = -math.inf
    suppressed_until = -math.inf
    pending = []
    for t, rt in trace:
        while pending and pending[0] <= t:
            at = pending.pop(0)
            suppressed_until = at + waiting
            events.append((at, "waiting_started"))
        v = rt if v is None else (1 - alpha) * v + alpha * rt
        n += 1
        if n < min_requests or t < in_flight_until or t < suppressed_until or pending:
            continue
        if v > upper or v < lower:
            events.append((t, "violation_upper" if v > upper else "violation_lower"))
            in_flight_until = t + latency
            pending.append(t + latency)
            if latency == 0:
                pending.pop()
                suppressed_until = t + waiting
                events.append((t, "waiting_started"))
    return events
