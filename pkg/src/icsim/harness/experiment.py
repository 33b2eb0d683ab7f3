"""Experiment runs and their on-disk artifacts.

A run directory holds four files:

* ``requests.csv``: request_id, arrival, completion, rt, ema_after (6 decimals;
  the last three are empty for requests still open at the horizon).
* ``telemetry.csv``: fixed-grid windows in long form
  (window_id, start, end, scope, entity, metric, value).
* ``events.jsonl``: one control event per line, in (time, seq) order.
* ``summary.json``: see ``SUMMARY_SCHEMA``. Every figure in it is derived from
  the other three files, which is what ``verify`` re-checks.
"""

from __future__ import annotations

import csv
import json
import math
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from ..decision import Decider, HpaPolicy, make_decider
from ..engine import Trace, run
from ..scenario import ScenarioConfig
from ..telemetry import grid_windows
from .metrics import normalized_resources, satisfaction

SUMMARY_SCHEMA = "icsim.summary"
SUMMARY_VERSION = 1
FILES = ("requests.csv", "telemetry.csv", "events.jsonl", "summary.json")
REQUEST_FIELDS = ("request_id", "arrival", "completion", "rt", "ema_after")
TELEMETRY_FIELDS = ("window_id", "start", "end", "scope", "entity", "metric", "value")


def _f(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def _r(x: float) -> float:
    return round(x, 6)


# -- writers -------------------------------------------------------------------


def write_requests(trace: Trace, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_FIELDS)
        for r in trace.requests:
            w.writerow([r.request_id, _f(r.arrival), _f(r.completion), _f(r.rt), _f(r.ema_after)])


def write_telemetry(trace: Trace, window_len: float, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_FIELDS)
        for win in grid_windows(trace.samples, window_len, trace.horizon):
            head = [win.window_id, _f(win.start), _f(win.end)]
            w.writerow(head + ["window", "", "request_count", win.request_count])
            w.writerow(head + ["window", "", "avg_rt", _f(win.avg_rt)])
            for scope, table in (("pod", win.pods), ("node", win.nodes), ("link", win.links)):
                for entity, metrics in table.items():
                    for metric, value in metrics.items():
                        w.writerow(head + [scope, entity, metric, _f(value)])


def write_events(trace: Trace, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for ev in trace.events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


# -- readers -------------------------------------------------------------------


def read_requests(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "request_id": int(row["request_id"]),
                "arrival": float(row["arrival"]),
                "completion": float(row["completion"]) if row["completion"] else None,
                "rt": float(row["rt"]) if row["rt"] else None,
                "ema_after": float(row["ema_after"]) if row["ema_after"] else None,
            })
    return rows


def read_events(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- summary -------------------------------------------------------------------


def _percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile."""
    k = max(1, math.ceil(q / 100 * len(sorted_values)))
    return sorted_values[k - 1]


def _stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "min": None, "max": None, "total": 0.0}
    return {
        "count": len(values),
        "mean": _r(statistics.fmean(values)),
        "min": _r(min(values)),
        "max": _r(max(values)),
        "total": _r(sum(values)),
    }


def allocation_log(events: Iterable[dict]) -> list[tuple[float, dict]]:
    return [(e["time"], e["payload"]["pods"]) for e in events if e["kind"] == "allocation"]


def count_scale_ups(log: list[tuple[float, dict]]) -> int:
    ups = 0
    for (_, a), (_, b) in zip(log, log[1:]):
        ups += sum(1 for pod in b if b[pod]["replicas"] > a.get(pod, {}).get("replicas", 0))
    return ups


def summarize(requests: list[dict], events: list[dict], meta: dict) -> dict:
    """Summary figures from parsed trace files plus run metadata."""
    horizon = meta["horizon"]
    lower, upper = meta["intent"]["lower_threshold"], meta["intent"]["upper_threshold"]
    done = sorted((r for r in requests if r["completion"] is not None),
                  key=lambda r: (r["completion"], r["request_id"]))
    points = [(r["completion"], r["ema_after"]) for r in done]
    pct, violated = satisfaction(points, lower, upper, horizon)
    rts = sorted(r["rt"] for r in done)
    log = allocation_log(events)
    violations = [e for e in events if e["kind"] == "violation"]
    received = [e for e in events if e["kind"] == "decision_received"]
    applied = [e for e in events if e["kind"] == "action_applied"]
    wall = [a["wall_latency"] for e in received for a in e["payload"]["attempts"] if "wall_latency" in a]
    return {
        "schema": SUMMARY_SCHEMA,
        "schema_version": SUMMARY_VERSION,
        **meta,
        "requests": {
            "admitted": len(requests),
            "completed": len(done),
            "open": len(requests) - len(done),
        },
        "intent_satisfaction": _r(pct),
        "violated_time": _r(violated),
        "normalized_resources": {
            pod: {"cpu": _r(v["cpu"]), "mem": _r(v["mem"])}
            for pod, v in normalized_resources(log, horizon).items()
        },
        "violations": {
            "total": len(violations),
            "upper": sum(1 for e in violations if e["payload"]["direction"] == "upper"),
            "lower": sum(1 for e in violations if e["payload"]["direction"] == "lower"),
        },
        "decisions": len(received),
        "fallbacks": sum(1 for e in events if e["kind"] == "fallback"),
        "actions_applied": len(applied),
        "actions_skipped": sum(1 for e in events if e["kind"] == "action_skipped"),
        "scale_ups": count_scale_ups(log),
        "injections": sum(1 for e in events if e["kind"] == "injected"),
        "tokens": {
            "in": sum(e["payload"]["tokens_in"] for e in received),
            "out": sum(e["payload"]["tokens_out"] for e in received),
        },
        "decider_latency": _stats([e["payload"]["latency"] for e in received]),
        "wall_latency": _stats(wall),
        "rt": {
            "mean": _r(statistics.fmean(rts)) if rts else None,
            "p50": _r(_percentile(rts, 50)) if rts else None,
            "p95": _r(_percentile(rts, 95)) if rts else None,
            "max": _r(rts[-1]) if rts else None,
        },
    }


def run_meta(scenario: ScenarioConfig, trace: Trace) -> dict:
    return {
        "scenario": scenario.name,
        "decider": trace.decider,
        "seed": trace.seed,
        "horizon": trace.horizon,
        "intent": {
            "upper_threshold": scenario.intent.upper_threshold,
            "lower_threshold": scenario.intent.lower_threshold,
            "waiting_time": scenario.intent.waiting_time,
        },
        "window_len": scenario.telemetry.window_len,
    }


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class RunResult:
    out_dir: Path
    summary: dict
    trace: Trace


def run_experiment(
    scenario: ScenarioConfig,
    out_dir: str | Path,
    decider: Decider | HpaPolicy | str | None = None,
    seed: int | None = None,
    duration: float | None = None,
) -> RunResult:
    """Simulate, write the four artifacts and return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = run(scenario, decider, seed, duration)
    write_requests(trace, out / "requests.csv")
    write_telemetry(trace, scenario.telemetry.window_len, out / "telemetry.csv")
    write_events(trace, out / "events.jsonl")
    meta = run_meta(scenario, trace)
    summary = summarize(read_requests(out / "requests.csv"), read_events(out / "events.jsonl"), meta)
    (out / "summary.json").write_text(_dump(summary), encoding="utf-8")
    return RunResult(out, summary, trace)


# -- verification ---------------------------------------------------------------


def _diff(expected: Any, actual: Any, path: str, out: list[str]) -> None:
    if isinstance(expected, dict) and isinstance(actual, dict):
        for k in sorted(set(expected) | set(actual)):
            if k not in expected or k not in actual:
                out.append(f"{path}{k}: present in only one of recomputed/stored")
            else:
                _diff(expected[k], actual[k], f"{path}{k}.", out)
    elif expected != actual:
        out.append(f"{path.rstrip('.')}: recomputed {expected!r} != stored {actual!r}")


def verify(run_dir: str | Path) -> list[str]:
    """Recompute summary.json from the trace files; returns the mismatches."""
    d = Path(run_dir)
    missing = [f for f in FILES if not (d / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{d}: missing {', '.join(missing)}")
    stored = json.loads((d / "summary.json").read_text(encoding="utf-8"))
    if stored.get("schema") != SUMMARY_SCHEMA or stored.get("schema_version") != SUMMARY_VERSION:
        return [f"unsupported summary schema {stored.get('schema')!r} v{stored.get('schema_version')!r}"]
    meta = {k: stored[k] for k in ("scenario", "decider", "seed", "horizon", "intent", "window_len")}
    requests = read_requests(d / "requests.csv")
    events = read_events(d / "events.jsonl")
    recomputed = json.loads(json.dumps(summarize(requests, events, meta)))
    problems: list[str] = []
    _diff(recomputed, stored, "", problems)
    # cross-file consistency that the summary alone cannot show
    for r in requests:
        if r["completion"] is not None and abs((r["completion"] - r["arrival"]) - r["rt"]) > 2e-6:
            problems.append(f"request {r['request_id']}: rt != completion - arrival")
            break
    times = [(e["time"], e["seq"]) for e in events]
    if times != sorted(times):
        problems.append("events.jsonl is not in (time, seq) order")
    with (d / "telemetry.csv").open(encoding="utf-8") as fh:
        counts = {}
        for row in csv.DictReader(fh):
            if row["scope"] == "window" and row["metric"] == "request_count":
                counts[int(row["window_id"])] = (float(row["start"]), float(row["end"]), int(float(row["value"])))
    done = [r for r in requests if r["completion"] is not None]
    if sum(c for _, _, c in counts.values()) > len(done):
        problems.append("telemetry windows count more completions than requests.csv")
    return problems


# -- comparison ----------------------------------------------------------------

COMPARE_FIELDS = (
    "decider",
    "intent_satisfaction",
    "violated_time",
    "violations",
    "decisions",
    "fallbacks",
    "scale_ups",
    "tokens_in",
    "tokens_out",
    "rt_mean",
    "rt_p95",
)


def slug(spec: str) -> str:
    kind, _, arg = spec.partition(":")
    if kind == "fixture":
        arg = Path(arg).stem
    elif kind == "hpa":
        arg = f"{float(arg):.2f}"
    return re.sub(r"[^A-Za-z0-9._-]+", "-", f"{kind}-{arg}" if arg else kind)


def compare_row(summary: dict) -> dict:
    return {
        "decider": summary["decider"],
        "intent_satisfaction": summary["intent_satisfaction"],
        "violated_time": summary["violated_time"],
        "violations": summary["violations"]["total"],
        "decisions": summary["decisions"],
        "fallbacks": summary["fallbacks"],
        "scale_ups": summary["scale_ups"],
        "tokens_in": summary["tokens"]["in"],
        "tokens_out": summary["tokens"]["out"],
        "rt_mean": summary["rt"]["mean"],
        "rt_p95": summary["rt"]["p95"],
    }


def compare(
    scenario: ScenarioConfig,
    deciders: list[str],
    out_dir: str | Path,
    seed: int | None = None,
    duration: float | None = None,
) -> list[dict]:
    """One run per decider on the same scenario and seed, plus a side-by-side table."""
    if len(deciders) < 2:
        raise ValueError("compare needs at least two deciders")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    used: dict[str, int] = {}
    for spec in deciders:
        name = slug(spec)
        used[name] = used.get(name, 0) + 1
        if used[name] > 1:
            name = f"{name}-{used[name]}"
        decider = make_decider(spec, scenario.intent.decision_latency)
        res = run_experiment(scenario, out / name, decider, seed, duration)
        rows.append({"run": name, **compare_row(res.summary)})
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=("run",) + COMPARE_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out / "comparison.json").write_text(_dump(rows), encoding="utf-8")
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ("decider", "intent_satisfaction", "violated_time", "violations", "decisions", "fallbacks", "scale_ups")
    heads = ("decider", "satisfaction%", "violated_s", "violations", "decisions", "fallbacks", "scale_ups")
    cells = [[str(r[c]) for c in cols] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(heads)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(heads, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
