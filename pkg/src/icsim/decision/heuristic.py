"""Rule-based root-cause analysis over a snapshot.

Deterministic stand-in for the LLM; also the fallback when a decider fails.
It reads nothing but the snapshot, so identical snapshots give identical
decisions. Ties are broken lexicographically on ids.
"""

from __future__ import annotations

from ..actuator import Rejected, apply, compute_route, placement_candidates
from ..model import (
    CPU_FLOOR,
    Snapshot,
    derive_flows,
    link_name,
    state_from_snapshot,
    topology_from_snapshot,
)
from .schema import (
    Decision,
    FlowScheduling,
    HorizontalScaling,
    ServicePlacement,
    VerticalScaling,
)

HOT_LINK = 0.9
HOT_POD = 0.8
COLD_POD = 0.4
CPU_STEP = 0.1
MEM_STEP = 100.0
MEM_FLOOR = 128.0


def _round(x: float) -> float:
    return round(x, 6)


def _window(snap: dict) -> dict:
    return snap["monitoring_data"].get("violation") or {}


def _link_utils(snap: dict) -> dict[str, float]:
    return {k: v.get("utilization", 0.0) for k, v in _window(snap).get("links", {}).items()}


def _pod_utils(snap: dict) -> dict[str, float]:
    return {k: v.get("cpu_utilization", 0.0) for k, v in _window(snap).get("pods", {}).items()}


def heuristic_decide(snapshot: Snapshot | dict, violation: dict | None = None) -> Decision:
    snap = snapshot.to_dict() if isinstance(snapshot, Snapshot) else snapshot
    violation = violation or snap["violation"]
    if violation["direction"] == "lower":
        return _lower(snap)
    return _upper(snap)


def _hot_links(snap: dict) -> tuple[set[str], set[str]]:
    utils = _link_utils(snap)
    hot = {name for name, u in utils.items() if u >= HOT_LINK}
    down = {f"{l['a']}-{l['b']}" for l in snap["network_info"]["links"] if not l["up"]}
    return hot | down, down


def _upper(snap: dict) -> Decision:
    topo = topology_from_snapshot(snap)
    state = state_from_snapshot(snap)
    link_utils = _link_utils(snap)
    hot, down = _hot_links(snap)

    # (1) app flows crossing a congested or failed link
    actions = []
    affected_links: set[str] = set()
    moved: set[str] = set()
    for route in snap["network_info"]["routes"]:
        flow, path = tuple(route["flow"]), route["path"]
        crossed = {link_name(a, b) for a, b in zip(path, path[1:])} & hot
        if not crossed:
            continue
        affected_links |= crossed
        avoid = [tuple(name.split("-")) for name in hot]
        alt = compute_route(topo, path[0], path[-1], link_utils, avoid=avoid)
        if alt is not None:
            actions.append(FlowScheduling(flow, tuple(alt)))
            continue
        pod = _downstream_pod(state, flow, topo.ingress_host)
        if pod is None or pod in moved:
            continue
        target = _network_feasible_node(state, topo, pod, link_utils, avoid)
        if target is not None:
            actions.append(ServicePlacement(pod, target))
            moved.add(pod)
    if affected_links:
        category = "link_failure" if affected_links & down else "link_congestion"
        detail = "hot links on application routes: " + ", ".join(sorted(affected_links))
        if actions:
            return Decision(category, detail, tuple(actions))

    # (2) CPU-saturated pod
    pod_utils = _pod_utils(snap)
    if not pod_utils:
        return Decision("other", "no pod telemetry in violation window")
    hottest = sorted(pod_utils, key=lambda p: (-pod_utils[p], p))[0]
    cpu, mem = state.limits[hottest]
    n_rep = len(state.replicas[hottest])
    if pod_utils[hottest] >= HOT_POD:
        detail = f"{hottest} at {pod_utils[hottest]:.2f} of its CPU limit"
        grown = VerticalScaling(hottest, _round(cpu + CPU_STEP), _round(mem + MEM_STEP))
        if _feasible(grown, state, topo):
            return Decision("cpu_shortage", detail, (grown,))
        if n_rep < state.max_replicas:
            out = HorizontalScaling(hottest, n_rep + 1)
            if _feasible(out, state, topo):
                return Decision("cpu_shortage", detail, (out,))
        cands = placement_candidates(state, topo, hottest, n_rep * cpu, n_rep * mem)
        cands = [c for c in cands if c not in state.nodes_of(hottest)]
        if cands:
            return Decision("cpu_shortage", detail, (ServicePlacement(hottest, cands[0]),))

    # (3) add capacity to the busiest pod of the chain
    for pod in sorted(pod_utils, key=lambda p: (-pod_utils[p], p)):
        n_rep = len(state.replicas[pod])
        detail = f"chain bottleneck {pod} at {pod_utils[pod]:.2f} of its CPU limit"
        if n_rep < state.max_replicas:
            out = HorizontalScaling(pod, n_rep + 1)
            if _feasible(out, state, topo):
                return Decision("cpu_shortage", detail, (out,))
        cpu, mem = state.limits[pod]
        grown = VerticalScaling(pod, _round(cpu + CPU_STEP), _round(mem + MEM_STEP))
        if _feasible(grown, state, topo):
            return Decision("cpu_shortage", detail, (grown,))
    return Decision("other", "no feasible corrective action")


def _lower(snap: dict) -> Decision:
    state = state_from_snapshot(snap)
    pod_utils = _pod_utils(snap)
    util = {p: pod_utils.get(p, 0.0) for p in state.pods}
    multi = [p for p in util if len(state.replicas[p]) > 1 and util[p] < COLD_POD]
    if multi:
        pod = sorted(multi, key=lambda p: (util[p], p))[0]
        return Decision(
            "over_provisioning",
            f"{pod} at {util[pod]:.2f} of its CPU limit across {len(state.replicas[pod])} replicas",
            (HorizontalScaling(pod, len(state.replicas[pod]) - 1),),
        )
    shrinkable = [p for p in util if state.limits[p][0] > CPU_FLOOR + 1e-9]
    if shrinkable:
        pod = sorted(shrinkable, key=lambda p: (util[p], p))[0]
        cpu, mem = state.limits[pod]
        return Decision(
            "over_provisioning",
            f"{pod} least utilized at {util[pod]:.2f}",
            (VerticalScaling(pod, _round(max(CPU_FLOOR, cpu - CPU_STEP)), _round(max(MEM_FLOOR, mem - MEM_STEP))),),
        )
    return Decision("over_provisioning", "all pods already at minimum allocation")


def _feasible(action, state, topo) -> bool:
    try:
        apply(action, state, topo)
    except Rejected:
        return False
    return True


def _downstream_pod(state, flow: tuple[str, str], ingress: str) -> str | None:
    """Pod receiving traffic on ``flow``; the last chain pod for the return leg."""
    chain = state.chain()
    src, dst = flow
    if dst == ingress and any(src in state.nodes_of(p) for p in chain[-1:]):
        return chain[-1]
    prev_hosts = {ingress}
    for pod in chain:
        hosts = set(state.nodes_of(pod))
        if src in prev_hosts and dst in hosts:
            return pod
        prev_hosts = hosts
    return None


def _network_feasible_node(state, topo, pod, link_utils, avoid) -> str | None:
    """Max-free-CPU node whose placement lets every flow avoid the hot links."""
    cpu, mem = state.limits[pod]
    k = len(state.replicas[pod])
    trial = state.copy()
    trial.replicas[pod] = []
    for node in placement_candidates(trial, topo, pod, k * cpu, k * mem):
        if node in state.nodes_of(pod):
            continue
        try:
            moved = apply(ServicePlacement(pod, node), state, topo, link_utils)
        except Rejected:
            continue
        ok = True
        for flow in derive_flows(moved, topo):
            if compute_route(topo, topo.switch_of(flow[0]), topo.switch_of(flow[1]), link_utils, avoid) is None:
                ok = False
                break
        if ok:
            return node
    return None
