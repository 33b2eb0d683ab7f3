"""Response-time EMA, violation detection and fixed-window aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

DEFAULT_ALPHA = 0.02
DEFAULT_WINDOW_LEN = 10.0
DEFAULT_K_PRE = 3
MIN_REQUESTS = 5
UTILIZATION_CAP = 2.0


@dataclass(frozen=True)
class EmaState:
    alpha: float = DEFAULT_ALPHA
    value: float = 0.0
    initialized: bool = False
    count: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


def ema_update(state: EmaState, rt: float) -> EmaState:
    if rt < 0 or math.isnan(rt):
        raise ValueError(f"response time must be non-negative, got {rt}")
    if not state.initialized:
        return EmaState(state.alpha, rt, True, 1)
    value = (1 - state.alpha) * state.value + state.alpha * rt
    return EmaState(state.alpha, value, True, state.count + 1)


@dataclass(frozen=True)
class Violation:
    direction: str  # "upper" | "lower"
    time: float
    ema: float

    def to_dict(self) -> dict:
        return {"direction": self.direction, "time": self.time, "ema": self.ema}


def detect(
    ema: EmaState,
    upper: float,
    lower: float,
    now: float,
    suppressed_until: float = float("-inf"),
    min_requests: int = MIN_REQUESTS,
) -> Violation | None:
    if not ema.initialized or ema.count < min_requests:
        return None
    if now < suppressed_until:
        return None
    if ema.value > upper:
        return Violation("upper", now, ema.value)
    if ema.value < lower:
        return Violation("lower", now, ema.value)
    return None


@dataclass
class Sample:
    """One telemetry sample covering [t, t + span).

    ``rts`` are the response times of requests completed in the span; the
    remaining maps are utilizations measured over the span.
    """

    t: float
    rts: list[float] = field(default_factory=list)
    pods: dict[str, dict[str, float]] = field(default_factory=dict)
    nodes: dict[str, dict[str, float]] = field(default_factory=dict)
    links: dict[str, dict[str, float]] = field(default_factory=dict)


@dataclass
class MetricsWindow:
    window_id: int
    start: float
    end: float
    avg_rt: float | None
    request_count: int
    pods: dict[str, dict[str, float]]
    nodes: dict[str, dict[str, float]]
    links: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "start": self.start,
            "end": self.end,
            "avg_rt": self.avg_rt,
            "request_count": self.request_count,
            "pods": self.pods,
            "nodes": self.nodes,
            "links": self.links,
        }


def _mean_nested(samples: list[Sample], attr: str) -> dict[str, dict[str, float]]:
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, dict[str, int]] = {}
    for s in samples:
        for ent, metrics in getattr(s, attr).items():
            for k, v in metrics.items():
                sums.setdefault(ent, {}).setdefault(k, 0.0)
                sums[ent][k] += v
                counts.setdefault(ent, {}).setdefault(k, 0)
                counts[ent][k] += 1
    out = {}
    for ent in sorted(sums):
        out[ent] = {k: sums[ent][k] / counts[ent][k] for k in sorted(sums[ent])}
        for k in out[ent]:
            if k.endswith("utilization"):
                out[ent][k] = min(out[ent][k], UTILIZATION_CAP)
    return out


def make_window(window_id: int, start: float, end: float, samples: Iterable[Sample]) -> MetricsWindow:
    inside = [s for s in samples if start <= s.t < end]
    rts = [rt for s in inside for rt in s.rts]
    return MetricsWindow(
        window_id=window_id,
        start=start,
        end=end,
        avg_rt=sum(rts) / len(rts) if rts else None,
        request_count=len(rts),
        pods=_mean_nested(inside, "pods"),
        nodes=_mean_nested(inside, "nodes"),
        links=_mean_nested(inside, "links"),
    )


@dataclass
class Aggregate:
    pre_windows: list[MetricsWindow]
    violation_window: MetricsWindow
    short_history: bool

    def to_dict(self) -> dict:
        return {
            "pre_violation": [w.to_dict() for w in self.pre_windows],
            "violation": self.violation_window.to_dict(),
            "short_history": self.short_history,
        }


def aggregate(
    samples: list[Sample],
    window_len: float = DEFAULT_WINDOW_LEN,
    k_pre: int = DEFAULT_K_PRE,
    violation_time: float = 0.0,
    history_start: float | None = None,
) -> Aggregate:
    """Pre-violation windows (oldest first) and the window ending at the violation.

    Windows are anchored at ``violation_time`` so they tile
    [violation_time - (k_pre + 1) * window_len, violation_time] without gaps.
    Windows that would start before the recorded history are dropped and the
    result is flagged ``short_history``.
    """
    if history_start is None:
        history_start = min((s.t for s in samples), default=violation_time)
    ordered = sorted(samples, key=lambda s: s.t)
    v_start = violation_time - window_len
    violation_window = make_window(k_pre, v_start, violation_time, ordered)
    pre: list[MetricsWindow] = []
    for j in range(k_pre, 0, -1):
        start = violation_time - (j + 1) * window_len
        if start < history_start - 1e-9:
            continue
        pre.append(make_window(k_pre - j, start, start + window_len, ordered))
    return Aggregate(pre, violation_window, short_history=len(pre) < k_pre)


def grid_windows(samples: list[Sample], window_len: float, horizon: float) -> list[MetricsWindow]:
    """Fixed grid of windows over [0, horizon); the last one may be partial."""
    out = []
    n = math.ceil(horizon / window_len - 1e-9)
    ordered = sorted(samples, key=lambda s: s.t)
    for i in range(n):
        start = i * window_len
        end = min(horizon, start + window_len)
        out.append(make_window(i, start, end, ordered))
    return out
