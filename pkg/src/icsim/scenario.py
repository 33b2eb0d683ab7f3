"""Scenario files: YAML documents describing one experiment.

Schema version 1 (see README for a full example)::

    version: 1
    topology: {ingress_host, switches, nodes: [...], links: [...]}
    pods: [{id, chain_index, cpu_limit, mem_limit, work_demand, io_time, ext_latency, pinned_node}]
    placement: {pod: node | [node, ...]}
    intent: {upper_threshold, lower_threshold, waiting_time, decision_latency}
    load: {phases: [{users, duration}], spawn_rate, think_time, think_jitter, payload_kb}
    events: [{label, type: background, links, rate, start, end} | {label, type: link_down|link_up, links, time}]
    telemetry: {alpha, window_len, k_pre, min_requests}
    control: {decider, retry_limit, max_replicas, discipline}
    calibration: {work_demand: {pod: x}, io_time: ..., ext_latency: ..., cpu_limit: ..., mem_limit: ...}
    seed: 1
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .mano import IntentSpec
from .model import (
    ContinuumTopology,
    DeploymentState,
    Link,
    Node,
    PodSpec,
    check_state,
    validate_topology,
)
from .network import BackgroundFlow, LinkToggle
from .telemetry import DEFAULT_ALPHA, DEFAULT_K_PRE, DEFAULT_WINDOW_LEN, MIN_REQUESTS

SCHEMA_VERSION = 1
PAYLOAD_KB = 499.69


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class LoadPhase:
    user_count: int
    duration: float


@dataclass(frozen=True)
class LoadSchedule:
    phases: tuple[LoadPhase, ...]
    spawn_rate: float = 1.0
    think_time: float = 1.0
    think_jitter: float = 0.2
    request_payload: float = PAYLOAD_KB  # KB

    def __post_init__(self) -> None:
        for ph in self.phases:
            if ph.duration <= 0:
                raise ScenarioError("load phase durations must be positive")
            if ph.user_count < 0:
                raise ScenarioError("user counts must be >= 0")
        if self.request_payload <= 0:
            raise ScenarioError("request payload must be positive")
        if self.spawn_rate <= 0:
            raise ScenarioError("spawn rate must be positive")
        if self.think_jitter < 0 or self.think_jitter > self.think_time:
            raise ScenarioError("think_jitter must lie in [0, think_time]")

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)

    def boundaries(self) -> list[tuple[float, int]]:
        out, t = [], 0.0
        for p in self.phases:
            out.append((t, p.user_count))
            t += p.duration
        return out


@dataclass(frozen=True)
class Injection:
    """One scripted disturbance; it may touch several links at once."""

    label: str
    kind: str  # background | link_down | link_up
    time: float
    items: tuple[BackgroundFlow | LinkToggle, ...]

    def to_dict(self) -> dict:
        d = {"label": self.label, "type": self.kind, "time": self.time,
             "links": [list(i.link) for i in self.items]}
        if self.kind == "background":
            d["rate"] = self.items[0].rate
            d["end"] = self.items[0].end
        return d


@dataclass(frozen=True)
class TelemetryConfig:
    alpha: float = DEFAULT_ALPHA
    window_len: float = DEFAULT_WINDOW_LEN
    k_pre: int = DEFAULT_K_PRE
    min_requests: int = MIN_REQUESTS


@dataclass(frozen=True)
class ControlConfig:
    decider: str = "heuristic"
    retry_limit: int = 2
    max_replicas: int = 5
    discipline: str = "fifo"  # or "ps" (processor sharing)


@dataclass
class ScenarioConfig:
    name: str
    topology: ContinuumTopology
    pods: list[PodSpec]
    placement: dict[str, str | list[str]]
    intent: IntentSpec
    load: LoadSchedule
    events: list[Injection] = field(default_factory=list)
    telemetry: TelemetryConfig = field(default_factory=TelemetryConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    seed: int = 1
    duration: float | None = None
    source: str | None = None

    @property
    def horizon(self) -> float:
        return self.duration if self.duration is not None else self.load.total_duration

    def initial_state(self) -> DeploymentState:
        return DeploymentState.initial(self.pods, self.placement, self.control.max_replicas)

    def with_overrides(self, **kw: Any) -> "ScenarioConfig":
        return replace(self, **kw)

    def validate(self) -> None:
        problems = validate_topology(self.topology)
        if problems:
            raise ScenarioError("invalid topology: " + "; ".join(f"{p.code}({p.detail})" for p in problems))
        ids = [p.id for p in self.pods]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate pod ids")
        for p in self.pods:
            if p.id not in self.placement:
                raise ScenarioError(f"pod {p.id} has no placement")
            if p.work_demand < 0 or p.io_time < 0 or p.ext_latency < 0:
                raise ScenarioError(f"pod {p.id} has negative demand")
            if p.pinned_node and not self.topology.has_node(p.pinned_node):
                raise ScenarioError(f"pod {p.id} pinned to unknown node {p.pinned_node}")
        pinned = {p.id: p.pinned_node for p in self.pods}
        for pid, where in self.placement.items():
            for h in [where] if isinstance(where, str) else where:
                if not self.topology.has_node(h):
                    raise ScenarioError(f"pod {pid} placed on unknown node {h}")
                if not self.topology.node(h).schedulable and pinned.get(pid) != h:
                    raise ScenarioError(f"pod {pid} placed on unschedulable node {h}")
        if self.control.discipline not in ("fifo", "ps"):
            raise ScenarioError(f"unknown queue discipline {self.control.discipline!r}")
        state = self.initial_state()
        breaches = check_state(state, self.topology)
        if breaches:
            raise ScenarioError("invalid initial deployment: " + ", ".join(breaches))
        for ev in self.events:
            if not 0 <= ev.time <= self.horizon:
                raise ScenarioError(f"event {ev.label} at {ev.time} outside [0, {self.horizon}]")
            for item in ev.items:
                if not self.topology.has_link(*item.link):
                    raise ScenarioError(f"event {ev.label} on unknown link {item.link}")


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ScenarioError(f"{where}: missing '{key}'")
    return d[key]


def scenario_from_dict(doc: dict, source: str | None = None) -> ScenarioConfig:
    doc = copy.deepcopy(doc)
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario version {version}")
    try:
        topo_d = _req(doc, "topology", "scenario")
        nodes = [
            Node(str(n["id"]), float(n["cpu"]), float(n["mem"]), str(n["switch"]), bool(n.get("schedulable", True)))
            for n in _req(topo_d, "nodes", "topology")
        ]
        links = [
            Link(str(l["a"]), str(l["b"]), float(l.get("capacity", 100.0)), float(l.get("latency", 0.001)),
                 bool(l.get("up", True)))
            for l in _req(topo_d, "links", "topology")
        ]
        topology = ContinuumTopology(nodes, [str(s) for s in _req(topo_d, "switches", "topology")], links,
                                     str(_req(topo_d, "ingress_host", "topology")))

        calib = doc.get("calibration") or {}
        pods = []
        for p in _req(doc, "pods", "scenario"):
            pid = str(p["id"])
            pods.append(PodSpec(
                id=pid,
                chain_index=int(p["chain_index"]),
                cpu_limit=float(calib.get("cpu_limit", {}).get(pid, p["cpu_limit"])),
                mem_limit=float(calib.get("mem_limit", {}).get(pid, p["mem_limit"])),
                work_demand=float(calib.get("work_demand", {}).get(pid, p.get("work_demand", 0.0))),
                io_time=float(calib.get("io_time", {}).get(pid, p.get("io_time", 0.0))),
                pinned_node=p.get("pinned_node"),
                ext_latency=float(calib.get("ext_latency", {}).get(pid, p.get("ext_latency", 0.0))),
            ))

        intent_d = doc.get("intent") or {}
        intent = IntentSpec(
            upper_threshold=float(intent_d.get("upper_threshold", 3.0)),
            lower_threshold=float(intent_d.get("lower_threshold", 1.0)),
            waiting_time=float(intent_d.get("waiting_time", 60.0)),
            decision_latency=None if intent_d.get("decision_latency") is None else float(intent_d["decision_latency"]),
        )

        load_d = _req(doc, "load", "scenario")
        load = LoadSchedule(
            phases=tuple(LoadPhase(int(ph["users"]), float(ph["duration"])) for ph in _req(load_d, "phases", "load")),
            spawn_rate=float(load_d.get("spawn_rate", 1.0)),
            think_time=float(load_d.get("think_time", 1.0)),
            think_jitter=float(load_d.get("think_jitter", 0.2)),
            request_payload=float(load_d.get("payload_kb", PAYLOAD_KB)),
        )

        events: list[Injection] = []
        for i, ev in enumerate(doc.get("events") or []):
            kind = ev.get("type")
            links = [tuple(str(x) for x in l) for l in (ev["links"] if "links" in ev else [ev["link"]])]
            label = str(ev.get("label", f"ev{i + 1}"))
            if kind == "background":
                start, end = float(ev["start"]), float(ev["end"])
                items = tuple(BackgroundFlow(l, float(ev["rate"]), start, end) for l in links)
                events.append(Injection(label, kind, start, items))
            elif kind in ("link_down", "link_up"):
                t = float(ev["time"])
                events.append(Injection(label, kind, t, tuple(LinkToggle(l, t, kind == "link_up") for l in links)))
            else:
                raise ScenarioError(f"unknown event type {kind!r}")

        tel = doc.get("telemetry") or {}
        telemetry = TelemetryConfig(
            alpha=float(tel.get("alpha", DEFAULT_ALPHA)),
            window_len=float(tel.get("window_len", DEFAULT_WINDOW_LEN)),
            k_pre=int(tel.get("k_pre", DEFAULT_K_PRE)),
            min_requests=int(tel.get("min_requests", MIN_REQUESTS)),
        )
        ctl = doc.get("control") or {}
        control = ControlConfig(
            decider=str(ctl.get("decider", "heuristic")),
            retry_limit=int(ctl.get("retry_limit", 2)),
            max_replicas=int(ctl.get("max_replicas", 5)),
            discipline=str(ctl.get("discipline", "fifo")),
        )
        placement = {str(k): v for k, v in _req(doc, "placement", "scenario").items()}
        cfg = ScenarioConfig(
            name=str(doc.get("name", "scenario")),
            topology=topology,
            pods=pods,
            placement=placement,
            intent=intent,
            load=load,
            events=events,
            telemetry=telemetry,
            control=control,
            seed=int(doc.get("seed", 1)),
            duration=None if doc.get("duration") is None else float(doc["duration"]),
            source=source,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load a scenario file; bare names resolve to the packaged fixtures."""
    p = Path(path)
    if not p.exists():
        name = p.name if p.suffix else p.name + ".yaml"
        packaged = resources.files("icsim.data").joinpath(name)
        if not packaged.is_file():
            raise ScenarioError(f"scenario file not found: {path}")
        text = packaged.read_text(encoding="utf-8")
        source = f"package:{name}"
    else:
        text = p.read_text(encoding="utf-8")
        source = str(p)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return scenario_from_dict(doc, source)
