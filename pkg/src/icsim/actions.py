"""Typed corrective actions shared by the decision makers and the actuator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class ServicePlacement:
    pod: str
    target_node: str
    type: str = field(default="service_placement", init=False)


@dataclass(frozen=True)
class HorizontalScaling:
    pod: str
    replicas: int
    type: str = field(default="horizontal_scaling", init=False)


@dataclass(frozen=True)
class VerticalScaling:
    pod: str
    cpu_limit: float
    mem_limit: float
    type: str = field(default="vertical_scaling", init=False)


@dataclass(frozen=True)
class FlowScheduling:
    flow: tuple[str, str]
    path: tuple[str, ...]
    type: str = field(default="flow_scheduling", init=False)


Action = Union[ServicePlacement, HorizontalScaling, VerticalScaling, FlowScheduling]


def action_to_dict(a: Action) -> dict:
    if isinstance(a, ServicePlacement):
        return {"type": a.type, "pod": a.pod, "target_node": a.target_node}
    if isinstance(a, HorizontalScaling):
        return {"type": a.type, "pod": a.pod, "replicas": a.replicas}
    if isinstance(a, VerticalScaling):
        return {"type": a.type, "pod": a.pod, "cpu_limit": a.cpu_limit, "mem_limit": a.mem_limit}
    if isinstance(a, FlowScheduling):
        return {"type": a.type, "flow": list(a.flow), "path": list(a.path)}
    raise TypeError(type(a).__name__)


def action_from_dict(d: dict) -> Action:
    t = d["type"]
    if t == "service_placement":
        return ServicePlacement(d["pod"], d["target_node"])
    if t == "horizontal_scaling":
        return HorizontalScaling(d["pod"], int(d["replicas"]))
    if t == "vertical_scaling":
        return VerticalScaling(d["pod"], float(d["cpu_limit"]), float(d["mem_limit"]))
    if t == "flow_scheduling":
        return FlowScheduling((d["flow"][0], d["flow"][1]), tuple(d["path"]))
    raise ValueError(f"unknown action type {t!r}")
