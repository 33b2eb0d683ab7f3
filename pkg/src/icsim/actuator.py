"""Applies corrective actions to a DeploymentState and maintains flow routes.

Plays the orchestrator (placement, scaling) and SDN controller (routes) roles.
Every ``apply`` works on a copy, so a rejection leaves the input untouched.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .actions import (
    Action,
    FlowScheduling,
    HorizontalScaling,
    ServicePlacement,
    VerticalScaling,
)
from .model import (
    CPU_FLOOR,
    ContinuumTopology,
    DeploymentState,
    Replica,
    capacity_check,
    derive_flows,
    link_key,
    link_name,
    route_problems,
)


class Rejected(Exception):
    """Action refused; ``reason`` is one of the machine-readable codes below."""

    REASONS = ("insufficient_capacity", "unknown_id", "invalid_path", "replica_bounds", "no_path")

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


def _util(utils: Mapping[str, float] | None, a: str, b: str) -> float:
    if not utils:
        return 0.0
    return float(utils.get(link_name(a, b), 0.0))


def path_key(path: list[str], utils: Mapping[str, float] | None) -> tuple:
    max_util = max((_util(utils, a, b) for a, b in zip(path, path[1:])), default=0.0)
    return (max_util, len(path) - 1, tuple(path))


def compute_route(
    topology: ContinuumTopology,
    src_switch: str,
    dst_switch: str,
    link_utilizations: Mapping[str, float] | None = None,
    avoid: Iterable[tuple[str, str]] = (),
) -> list[str] | None:
    """Best simple path from ``src_switch`` to ``dst_switch``, or None.

    Paths run over up links not in ``avoid`` and are ranked by
    (max link utilization, hop count, switch sequence).

    Search is a best-first expansion over partial simple paths. The key of a
    partial path never decreases when it is extended (max util and hop count
    are monotone, and a prefix sorts before its extensions), so the first
    complete path popped is the minimum.
    """
    import heapq

    switches = set(topology.switches)
    if src_switch not in switches or dst_switch not in switches:
        raise Rejected("unknown_id", f"{src_switch}->{dst_switch}")
    if src_switch == dst_switch:
        return [src_switch]
    banned = {link_key(*l) for l in avoid}
    adj = {s: [] for s in topology.switches}
    for l in topology.links:
        if l.up and l.key not in banned:
            adj[l.endpoint_a].append(l.endpoint_b)
            adj[l.endpoint_b].append(l.endpoint_a)

    heap: list[tuple[tuple, list[str]]] = [(path_key([src_switch], link_utilizations), [src_switch])]
    while heap:
        key, path = heapq.heappop(heap)
        last = path[-1]
        if last == dst_switch:
            return path
        for nxt in adj[last]:
            if nxt in path:
                continue
            ext = path + [nxt]
            heapq.heappush(heap, (path_key(ext, link_utilizations), ext))
    return None


def recompute_all_routes(
    state: DeploymentState,
    topology: ContinuumTopology,
    utilizations: Mapping[str, float] | None = None,
) -> DeploymentState:
    """Re-derive the flow set and route every flow afresh.

    The route version is bumped only if some flow's path changed or a flow
    appeared/disappeared.
    """
    new = state.copy()
    routes: dict[tuple[str, str], list[str]] = {}
    for flow in derive_flows(state, topology):
        path = compute_route(topology, topology.switch_of(flow[0]), topology.switch_of(flow[1]), utilizations)
        if path is None:
            raise Rejected("no_path", f"{flow[0]}->{flow[1]}")
        routes[flow] = path
    if routes != state.routes:
        new.routes = routes
        new.route_version = state.route_version + 1
    return new


def route_diff(before: DeploymentState, after: DeploymentState) -> list[dict]:
    out = []
    for flow in sorted(set(before.routes) | set(after.routes)):
        a, b = before.routes.get(flow), after.routes.get(flow)
        if a != b:
            out.append({"flow": list(flow), "before": a, "after": b})
    return out


def _check_pod(state: DeploymentState, pod: str) -> None:
    if pod not in state.pods:
        raise Rejected("unknown_id", f"pod {pod}")


def _check_node(topology: ContinuumTopology, node: str) -> None:
    if not topology.has_node(node):
        raise Rejected("unknown_id", f"node {node}")


def placement_candidates(
    state: DeploymentState,
    topology: ContinuumTopology,
    pod: str,
    cpu: float,
    mem: float,
) -> list[str]:
    """Nodes that can host one more replica of ``pod``, best (max free CPU) first."""
    spec = state.pods[pod]
    cands = []
    for n in topology.nodes:
        if spec.pinned_node and n.id != spec.pinned_node:
            continue
        if not n.schedulable and n.id != spec.pinned_node:
            continue
        if capacity_check(state, topology, n.id, cpu, mem) is None:
            cands.append(n.id)
    return sorted(cands, key=lambda nid: (-state.free_cpu(topology, nid), nid))


def apply(
    action: Action,
    state: DeploymentState,
    topology: ContinuumTopology,
    utilizations: Mapping[str, float] | None = None,
) -> DeploymentState:
    """Return the state after ``action`` or raise ``Rejected`` (input untouched)."""
    new = state.copy()

    if isinstance(action, ServicePlacement):
        _check_pod(state, action.pod)
        _check_node(topology, action.target_node)
        spec = state.pods[action.pod]
        if spec.pinned_node and spec.pinned_node != action.target_node:
            raise Rejected("insufficient_capacity", f"{action.pod} is pinned to {spec.pinned_node}")
        if not topology.node(action.target_node).schedulable:
            raise Rejected("insufficient_capacity", f"{action.target_node} is not schedulable")
        cpu, mem = state.limits[action.pod]
        k = len(state.replicas[action.pod])
        if all(r.node_id == action.target_node for r in state.replicas[action.pod]):
            return new
        new.replicas[action.pod] = []
        short = capacity_check(new, topology, action.target_node, k * cpu, k * mem)
        if short:
            raise Rejected("insufficient_capacity", f"{short} on {action.target_node}")
        new.replicas[action.pod] = [
            Replica(new.new_replica_id(action.pod), action.target_node) for _ in range(k)
        ]
        return recompute_all_routes(new, topology, utilizations)

    if isinstance(action, HorizontalScaling):
        _check_pod(state, action.pod)
        if not 1 <= action.replicas <= state.max_replicas:
            raise Rejected("replica_bounds", f"{action.replicas} not in [1, {state.max_replicas}]")
        current = len(state.replicas[action.pod])
        if action.replicas == current:
            return new
        cpu, mem = state.limits[action.pod]
        if action.replicas < current:
            new.replicas[action.pod] = list(state.replicas[action.pod][: action.replicas])
        else:
            for _ in range(action.replicas - current):
                cands = placement_candidates(new, topology, action.pod, cpu, mem)
                if not cands:
                    raise Rejected("insufficient_capacity", f"no node fits another {action.pod}")
                new.replicas[action.pod].append(Replica(new.new_replica_id(action.pod), cands[0]))
        return recompute_all_routes(new, topology, utilizations)

    if isinstance(action, VerticalScaling):
        _check_pod(state, action.pod)
        if action.cpu_limit < CPU_FLOOR - 1e-9 or action.mem_limit <= 0:
            raise Rejected("insufficient_capacity", "limits below floor")
        old_cpu, old_mem = state.limits[action.pod]
        new.limits[action.pod] = (action.cpu_limit, action.mem_limit)
        for node_id in sorted(set(state.nodes_of(action.pod))):
            node = topology.node(node_id)
            cpu, mem = new.node_usage(node_id)
            if cpu > node.cpu_capacity + 1e-9:
                raise Rejected("insufficient_capacity", f"cpu on {node_id}")
            if mem > node.mem_capacity + 1e-9:
                raise Rejected("insufficient_capacity", f"mem on {node_id}")
        return new

    if isinstance(action, FlowScheduling):
        flow = (action.flow[0], action.flow[1])
        for h in flow:
            _check_node(topology, h)
        if flow not in derive_flows(state, topology):
            raise Rejected("unknown_id", f"flow {flow[0]}->{flow[1]} is not part of the journey")
        path = list(action.path)
        if any(s not in set(topology.switches) for s in path):
            raise Rejected("unknown_id", f"path {path}")
        problems = route_problems(topology, flow, path)
        if problems:
            raise Rejected("invalid_path", ",".join(problems))
        if state.routes.get(flow) != path:
            new.routes[flow] = path
            new.route_version = state.route_version + 1
        return new

    raise Rejected("unknown_id", f"unsupported action {type(action).__name__}")
