"""Horizontal-autoscaler analog used as the baseline decider.

desired = clamp(ceil(current * util / target), 1, max_replicas); scale-ups
are immediate, scale-downs wait out the cooldown since the last change.
"""

from __future__ import annotations

import math
from typing import Mapping

COOLDOWN = 300.0
SYNC_PERIOD = 15.0
METRIC_WINDOW = 60.0


def desired_replicas(util: float, target: float, current: int, max_replicas: int = 5) -> int:
    if not 0 < target <= 1:
        raise ValueError(f"target must lie in (0, 1], got {target}")
    ratio = util / target
    if ratio == 1.0:
        return min(max(current, 1), max_replicas)
    return min(max(math.ceil(current * ratio), 1), max_replicas)


def hpa_decide(
    pod_utilizations: Mapping[str, float],
    target: float,
    current_replicas: Mapping[str, int],
    now: float,
    last_scale_change: Mapping[str, float],
    cooldown: float = COOLDOWN,
    max_replicas: int = 5,
) -> dict[str, int]:
    """Replica count per pod after one reconciliation pass."""
    out = {}
    for pod in sorted(current_replicas):
        current = current_replicas[pod]
        desired = desired_replicas(pod_utilizations.get(pod, 0.0), target, current, max_replicas)
        if desired < current and now - last_scale_change.get(pod, 0.0) < cooldown:
            desired = current
        out[pod] = desired
    return out
