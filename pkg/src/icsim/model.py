"""Typed model of the continuum substrate and the deployed microservice chain.

The topology is immutable once validated. ``DeploymentState`` is the logical
state (replicas, limits, routes) that the actuator mutates; it is copied on
every change so a rejected action never leaves a half-applied state behind.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

CPU_FLOOR = 0.2
MAX_REPLICAS = 5
CAPACITY_EPS = 1e-9


@dataclass(frozen=True)
class Node:
    id: str
    cpu_capacity: float
    mem_capacity: float
    attached_switch: str
    schedulable: bool = True


@dataclass(frozen=True)
class Link:
    endpoint_a: str
    endpoint_b: str
    capacity: float = 100.0  # Mb/s
    latency: float = 0.001  # s
    up: bool = True

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.endpoint_a, self.endpoint_b)

    @property
    def name(self) -> str:
        return "-".join(self.key)


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def link_name(a: str, b: str) -> str:
    return "-".join(link_key(a, b))


@dataclass
class ContinuumTopology:
    nodes: list[Node]
    switches: list[str]
    links: list[Link]
    ingress_host: str

    def __post_init__(self) -> None:
        self._nodes = {n.id: n for n in self.nodes}
        self._links = {l.key: l for l in self.links}

    def node(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def link(self, a: str, b: str) -> Link:
        return self._links[link_key(a, b)]

    def has_link(self, a: str, b: str) -> bool:
        return link_key(a, b) in self._links

    def switch_of(self, host: str) -> str:
        return self._nodes[host].attached_switch

    def adjacency(self, up_only: bool = True) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {s: [] for s in self.switches}
        for l in self.links:
            if up_only and not l.up:
                continue
            adj.setdefault(l.endpoint_a, []).append(l.endpoint_b)
            adj.setdefault(l.endpoint_b, []).append(l.endpoint_a)
        for s in adj:
            adj[s].sort()
        return adj

    def with_link_state(self, down: Iterable[tuple[str, str]]) -> "ContinuumTopology":
        """Copy of the topology with the given links marked down (others up)."""
        down_keys = {link_key(*k) for k in down}
        links = [
            Link(l.endpoint_a, l.endpoint_b, l.capacity, l.latency, l.key not in down_keys)
            for l in self.links
        ]
        return ContinuumTopology(list(self.nodes), list(self.switches), links, self.ingress_host)


@dataclass(frozen=True)
class TopologyViolation:
    code: str
    detail: str


def validate_topology(topology: ContinuumTopology) -> list[TopologyViolation]:
    """Return every invariant breach; an empty list means the topology is valid."""
    out: list[TopologyViolation] = []

    def dupes(items: Iterable[Any]) -> list[Any]:
        seen, dup = set(), []
        for it in items:
            if it in seen and it not in dup:
                dup.append(it)
            seen.add(it)
        return dup

    for nid in dupes(n.id for n in topology.nodes):
        out.append(TopologyViolation("duplicate-node", nid))
    for sid in dupes(topology.switches):
        out.append(TopologyViolation("duplicate-switch", sid))
    for key in dupes(l.key for l in topology.links):
        out.append(TopologyViolation("duplicate-link", "-".join(key)))

    switches = set(topology.switches)
    for n in topology.nodes:
        if n.attached_switch not in switches:
            out.append(TopologyViolation("unknown-switch", f"{n.id}->{n.attached_switch}"))
        if not (n.cpu_capacity > 0 and n.mem_capacity > 0):
            out.append(TopologyViolation("non-positive-capacity", n.id))
    for l in topology.links:
        if l.endpoint_a not in switches or l.endpoint_b not in switches:
            out.append(TopologyViolation("unknown-switch", l.name))
        if l.endpoint_a == l.endpoint_b:
            out.append(TopologyViolation("self-loop", l.name))
        if not l.capacity > 0:
            out.append(TopologyViolation("non-positive-capacity", l.name))
        if l.latency < 0:
            out.append(TopologyViolation("negative-latency", l.name))
    if topology.ingress_host not in {n.id for n in topology.nodes}:
        out.append(TopologyViolation("unknown-ingress", topology.ingress_host))

    if topology.switches:
        adj = topology.adjacency(up_only=True)
        start = topology.switches[0]
        seen = {start}
        stack = [start]
        while stack:
            s = stack.pop()
            for t in adj.get(s, []):
                if t not in seen and t in switches:
                    seen.add(t)
                    stack.append(t)
        missing = sorted(switches - seen)
        if missing:
            out.append(TopologyViolation("disconnected", ",".join(missing)))
    return out


@dataclass(frozen=True)
class PodSpec:
    id: str
    chain_index: int
    cpu_limit: float
    mem_limit: float
    work_demand: float  # core-seconds per request
    io_time: float = 0.0  # non-CPU seconds per request that still occupy the worker
    pinned_node: str | None = None
    ext_latency: float = 0.0  # fixed wait on outside services; no queueing, no CPU


@dataclass(frozen=True)
class Replica:
    replica_id: str
    node_id: str


@dataclass
class DeploymentState:
    """Logical deployment: replicas, per-pod limits and installed routes."""

    pods: dict[str, PodSpec]
    replicas: dict[str, list[Replica]]
    limits: dict[str, tuple[float, float]]
    routes: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    route_version: int = 0
    replica_counter: dict[str, int] = field(default_factory=dict)
    max_replicas: int = MAX_REPLICAS

    @classmethod
    def initial(
        cls,
        pods: Iterable[PodSpec],
        placement: dict[str, str | list[str]],
        max_replicas: int = MAX_REPLICAS,
    ) -> "DeploymentState":
        pods = list(pods)
        replicas: dict[str, list[Replica]] = {}
        counter: dict[str, int] = {}
        for p in pods:
            where = placement[p.id]
            hosts = [where] if isinstance(where, str) else list(where)
            replicas[p.id] = [Replica(f"{p.id}-r{i}", h) for i, h in enumerate(hosts)]
            counter[p.id] = len(hosts)
        return cls(
            pods={p.id: p for p in pods},
            replicas=replicas,
            limits={p.id: (p.cpu_limit, p.mem_limit) for p in pods},
            replica_counter=counter,
            max_replicas=max_replicas,
        )

    def copy(self) -> "DeploymentState":
        return copy.deepcopy(self)

    def chain(self) -> list[str]:
        return [p.id for p in sorted(self.pods.values(), key=lambda p: p.chain_index)]

    def nodes_of(self, pod_id: str) -> list[str]:
        return [r.node_id for r in self.replicas[pod_id]]

    def new_replica_id(self, pod_id: str) -> str:
        n = self.replica_counter.get(pod_id, 0)
        self.replica_counter[pod_id] = n + 1
        return f"{pod_id}-r{n}"

    def node_usage(self, node_id: str) -> tuple[float, float]:
        cpu = mem = 0.0
        for pod_id, reps in self.replicas.items():
            c, m = self.limits[pod_id]
            k = sum(1 for r in reps if r.node_id == node_id)
            cpu += k * c
            mem += k * m
        return cpu, mem

    def free_cpu(self, topology: ContinuumTopology, node_id: str) -> float:
        return topology.node(node_id).cpu_capacity - self.node_usage(node_id)[0]

    def pods_on(self, node_id: str) -> list[str]:
        return sorted({pid for pid, reps in self.replicas.items() for r in reps if r.node_id == node_id})


class Insufficient(str):
    """Marker returned by ``capacity_check`` naming the exhausted resource."""


def capacity_check(
    state: DeploymentState,
    topology: ContinuumTopology,
    node_id: str,
    extra_cpu: float,
    extra_mem: float,
) -> Insufficient | None:
    """None when ``node_id`` can absorb the extra demand, else the short resource."""
    node = topology.node(node_id)
    cpu, mem = state.node_usage(node_id)
    if cpu + extra_cpu > node.cpu_capacity + CAPACITY_EPS:
        return Insufficient("cpu")
    if mem + extra_mem > node.mem_capacity + CAPACITY_EPS:
        return Insufficient("mem")
    return None


def check_state(state: DeploymentState, topology: ContinuumTopology) -> list[str]:
    """Invariant breaches of a deployment state (empty when consistent)."""
    problems: list[str] = []
    for n in topology.nodes:
        cpu, mem = state.node_usage(n.id)
        if cpu > n.cpu_capacity + CAPACITY_EPS:
            problems.append(f"cpu-overcommit:{n.id}")
        if mem > n.mem_capacity + CAPACITY_EPS:
            problems.append(f"mem-overcommit:{n.id}")
    idx = sorted(p.chain_index for p in state.pods.values())
    if idx != list(range(1, len(idx) + 1)):
        problems.append("chain-index-gap")
    for pid, reps in state.replicas.items():
        if not 1 <= len(reps) <= state.max_replicas:
            problems.append(f"replica-bounds:{pid}")
        cpu, mem = state.limits[pid]
        if cpu < CPU_FLOOR - CAPACITY_EPS or mem <= 0:
            problems.append(f"limit-floor:{pid}")
        for r in reps:
            if not topology.has_node(r.node_id):
                problems.append(f"unknown-node:{r.replica_id}")
    for flow, path in state.routes.items():
        problems.extend(f"{p}:{flow[0]}>{flow[1]}" for p in route_problems(topology, flow, path))
    return problems


def route_problems(topology: ContinuumTopology, flow: tuple[str, str], path: list[str]) -> list[str]:
    out = []
    if not path:
        return ["empty-path"]
    if len(set(path)) != len(path):
        out.append("not-simple")
    if path[0] != topology.switch_of(flow[0]) or path[-1] != topology.switch_of(flow[1]):
        out.append("endpoint-mismatch")
    for a, b in zip(path, path[1:]):
        if not topology.has_link(a, b):
            out.append("no-link")
        elif not topology.link(a, b).up:
            out.append("link-down")
    return out


def journey_hops(state: DeploymentState, ingress: str) -> list[list[tuple[str, str]]]:
    """Host pairs per hop of the request journey, ingress -> p1 -> ... -> pK -> ingress."""
    stops = [[ingress]] + [sorted(set(state.nodes_of(p))) for p in state.chain()] + [[ingress]]
    hops = []
    for src_hosts, dst_hosts in zip(stops, stops[1:]):
        hops.append([(s, d) for s in src_hosts for d in dst_hosts])
    return hops


def derive_flows(state: DeploymentState, topology: ContinuumTopology) -> list[tuple[str, str]]:
    """Cross-node host pairs of the request journey, in journey order, deduplicated."""
    flows: list[tuple[str, str]] = []
    for hop in journey_hops(state, topology.ingress_host):
        for src, dst in hop:
            if src != dst and (src, dst) not in flows:
                flows.append((src, dst))
    return flows


# -- canonical serialization ------------------------------------------------


def _canon(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, int)):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float {obj!r} cannot be serialized")
        v = float(f"{obj:.6g}")
        return 0.0 if v == 0 else v
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Sorted keys, compact separators, floats at 6 significant digits."""
    return json.dumps(_canon(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass
class Snapshot:
    cluster_info: dict
    network_info: dict
    monitoring_data: dict
    intent: dict
    violation: dict

    def to_dict(self) -> dict:
        return {
            "cluster_info": self.cluster_info,
            "network_info": self.network_info,
            "monitoring_data": self.monitoring_data,
            "intent": self.intent,
            "violation": self.violation,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Snapshot":
        d = json.loads(text)
        return cls(**{k: d[k] for k in ("cluster_info", "network_info", "monitoring_data", "intent", "violation")})


def cluster_info(state: DeploymentState, topology: ContinuumTopology) -> dict:
    nodes = []
    for n in topology.nodes:
        cpu, mem = state.node_usage(n.id)
        nodes.append({
            "id": n.id,
            "cpu_capacity": n.cpu_capacity,
            "mem_capacity": n.mem_capacity,
            "cpu_allocated": cpu,
            "mem_allocated": mem,
            "schedulable": n.schedulable,
            "replicas": sorted(r.replica_id for reps in state.replicas.values() for r in reps if r.node_id == n.id),
        })
    pods = []
    for pid in state.chain():
        spec = state.pods[pid]
        cpu, mem = state.limits[pid]
        entry = {
            "id": pid,
            "chain_index": spec.chain_index,
            "cpu_limit": cpu,
            "mem_limit": mem,
            "replicas": [{"replica_id": r.replica_id, "node": r.node_id} for r in state.replicas[pid]],
        }
        if spec.pinned_node:
            entry["pinned_node"] = spec.pinned_node
        pods.append(entry)
    return {
        "nodes": nodes,
        "pods": pods,
        "max_replicas": state.max_replicas,
        "cpu_floor": CPU_FLOOR,
    }


def network_info(state: DeploymentState, topology: ContinuumTopology) -> dict:
    return {
        "switches": list(topology.switches),
        "hosts": [{"id": n.id, "switch": n.attached_switch} for n in topology.nodes],
        "ingress_host": topology.ingress_host,
        "links": [
            {"a": l.key[0], "b": l.key[1], "capacity": l.capacity, "latency": l.latency, "up": l.up}
            for l in sorted(topology.links, key=lambda l: l.key)
        ],
        "routes": [
            {"flow": [s, d], "path": list(state.routes[(s, d)])}
            for (s, d) in derive_flows(state, topology)
            if (s, d) in state.routes
        ],
    }


def snapshot(
    state: DeploymentState,
    topology: ContinuumTopology,
    telemetry_summary: dict,
    intent: dict,
    violation: dict | None,
) -> Snapshot:
    if violation is None:
        raise ValueError("snapshot requires a violation descriptor")
    return Snapshot(
        cluster_info=cluster_info(state, topology),
        network_info=network_info(state, topology),
        monitoring_data=telemetry_summary,
        intent=dict(intent),
        violation=dict(violation),
    )


def topology_from_snapshot(snap: Snapshot | dict) -> ContinuumTopology:
    """Rebuild a topology from a snapshot's cluster and network sections."""
    d = snap.to_dict() if isinstance(snap, Snapshot) else snap
    ci, ni = d["cluster_info"], d["network_info"]
    attach = {h["id"]: h["switch"] for h in ni["hosts"]}
    nodes = [
        Node(n["id"], n["cpu_capacity"], n["mem_capacity"], attach[n["id"]], n.get("schedulable", True))
        for n in ci["nodes"]
    ]
    links = [Link(l["a"], l["b"], l["capacity"], l["latency"], l["up"]) for l in ni["links"]]
    return ContinuumTopology(nodes, list(ni["switches"]), links, ni["ingress_host"])


def state_from_snapshot(snap: Snapshot | dict) -> DeploymentState:
    """Rebuild the deployment view carried by a snapshot (work demands unknown, set to 0)."""
    d = snap.to_dict() if isinstance(snap, Snapshot) else snap
    ci, ni = d["cluster_info"], d["network_info"]
    pods, replicas, limits = {}, {}, {}
    for p in ci["pods"]:
        pods[p["id"]] = PodSpec(p["id"], p["chain_index"], p["cpu_limit"], p["mem_limit"], 0.0,
                                pinned_node=p.get("pinned_node"))
        replicas[p["id"]] = [Replica(r["replica_id"], r["node"]) for r in p["replicas"]]
        limits[p["id"]] = (p["cpu_limit"], p["mem_limit"])
    routes = {(r["flow"][0], r["flow"][1]): list(r["path"]) for r in ni.get("routes", [])}
    counter = {}
    for pid, reps in replicas.items():
        idx = [int(r.replica_id.rsplit("-r", 1)[1]) for r in reps if r.replica_id.rsplit("-r", 1)[-1].isdigit()]
        counter[pid] = max(idx, default=-1) + 1
    return DeploymentState(pods, replicas, limits, routes, replica_counter=counter,
                           max_replicas=ci.get("max_replicas", MAX_REPLICAS))
