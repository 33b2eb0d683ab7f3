"""Run metrics: time-based intent satisfaction and normalized resources."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence


def violated_intervals(
    points: Sequence[tuple[float, float]],
    lower: float,
    upper: float,
    horizon: float,
) -> list[tuple[float, float]]:
    """Maximal intervals where the step-wise EMA lies outside [lower, upper].

    ``points`` are (completion time, EMA after that completion) in time
    order; the EMA holds its value until the next point and the last value
    holds until ``horizon``.
    """
    out: list[tuple[float, float]] = []
    for i, (t, v) in enumerate(points):
        if t >= horizon:
            break
        end = min(points[i + 1][0], horizon) if i + 1 < len(points) else horizon
        if end <= t or lower <= v <= upper:
            continue
        if out and abs(out[-1][1] - t) < 1e-12:
            out[-1] = (out[-1][0], end)
        else:
            out.append((t, end))
    return out


def satisfaction(
    points: Sequence[tuple[float, float]],
    lower: float,
    upper: float,
    horizon: float,
) -> tuple[float, float]:
    """(percent satisfied, violated seconds) over [0, horizon).

    Time before the first EMA value counts as satisfied.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    violated = sum(b - a for a, b in violated_intervals(points, lower, upper, horizon))
    return 100.0 * (horizon - violated) / horizon, violated


def normalized_resources(
    allocations: Iterable[tuple[float, Mapping[str, Mapping[str, float]]]],
    horizon: float,
) -> dict[str, dict[str, float]]:
    """Time-weighted mean of replicas x limit per pod over [0, horizon).

    ``allocations`` is the change log: (time, {pod: {replicas, cpu_limit,
    mem_limit}}), the first entry at t = 0.
    """
    log = sorted(allocations, key=lambda a: a[0])
    if not log or log[0][0] > 0:
        raise ValueError("allocation log must start at t = 0")
    acc: dict[str, list[float]] = {}
    for i, (t, alloc) in enumerate(log):
        end = log[i + 1][0] if i + 1 < len(log) else horizon
        span = max(0.0, min(end, horizon) - t)
        for pod, a in alloc.items():
            cell = acc.setdefault(pod, [0.0, 0.0])
            cell[0] += span * a["replicas"] * a["cpu_limit"]
            cell[1] += span * a["replicas"] * a["mem_limit"]
    return {pod: {"cpu": c / horizon, "mem": m / horizon} for pod, (c, m) in sorted(acc.items())}


def resolution_times(
    points: Sequence[tuple[float, float]],
    applied_at: Sequence[float],
    lower: float,
    upper: float,
) -> list[float | None]:
    """Seconds from each action time until the EMA is back inside the band.

    0 when it already is; None when it never returns.
    """
    out: list[float | None] = []
    for t0 in applied_at:
        prior = [v for t, v in points if t <= t0]
        if prior and lower <= prior[-1] <= upper:
            out.append(0.0)
            continue
        hit = next((t for t, v in points if t > t0 and lower <= v <= upper), None)
        out.append(None if hit is None else hit - t0)
    return out
