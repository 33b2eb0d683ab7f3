"""Intent watch loop and orchestration glue.

On a violation the loop snapshots the system, consults the decision maker
(re-asking on malformed answers, then falling back to the heuristic), applies
the returned actions through the actuator and suppresses detection for the
waiting window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from . import actuator
from .actions import action_to_dict
from .decision import Decider, MissingFixture, Reply, Request, SchemaError, TransportError
from .decision.heuristic import heuristic_decide
from .decision.prompt import FewShotExample, build_prompt
from .decision.schema import Decision, parse_decision
from .model import ContinuumTopology, DeploymentState, Snapshot
from .telemetry import EmaState, Violation, detect

log = logging.getLogger(__name__)

RETRY_LIMIT = 2
EVENT_KINDS = (
    "violation",
    "decision_requested",
    "decision_received",
    "action_applied",
    "action_skipped",
    "fallback",
    "waiting_started",
    "injected",
    "allocation",
    "load_phase",
)


@dataclass(frozen=True)
class IntentSpec:
    upper_threshold: float = 3.0
    lower_threshold: float = 1.0
    waiting_time: float = 60.0
    decision_latency: float | None = None  # None: the decider's own default

    def __post_init__(self) -> None:
        if not 0 <= self.lower_threshold < self.upper_threshold:
            raise ValueError("intent needs 0 <= lower < upper")
        if self.waiting_time < 0:
            raise ValueError("waiting_time must be >= 0")

    def to_dict(self) -> dict:
        return {
            "upper_threshold": self.upper_threshold,
            "lower_threshold": self.lower_threshold,
            "waiting_time": self.waiting_time,
        }


@dataclass
class ControlEvent:
    time: float
    seq: int
    kind: str
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"time": round(self.time, 6), "seq": self.seq, "kind": self.kind, "payload": self.payload}


class EventLog:
    def __init__(self) -> None:
        self.events: list[ControlEvent] = []

    def emit(self, time: float, kind: str, /, **payload: Any) -> ControlEvent:
        if self.events and time < self.events[-1].time - 1e-9:
            raise RuntimeError(f"control event {kind} at {time} precedes {self.events[-1].time}")
        ev = ControlEvent(time, len(self.events), kind, payload)
        self.events.append(ev)
        return ev


@dataclass
class LoopState:
    suppressed_until: float = float("-inf")
    in_flight: bool = False
    violations: int = 0


def watch_step(
    now: float,
    ema: EmaState,
    intent: IntentSpec,
    loop: LoopState,
    min_requests: int = 5,
) -> Violation | None:
    """Trigger at most once per episode: never while in flight or waiting."""
    if loop.in_flight:
        return None
    return detect(ema, intent.upper_threshold, intent.lower_threshold, now, loop.suppressed_until, min_requests)


@dataclass
class Consultation:
    violation: Violation
    index: int
    snapshot: Snapshot
    attempts: list[dict]
    decision: Decision | None
    latency: float
    tokens_in: int
    tokens_out: int


def consult(
    decider: Decider,
    violation: Violation,
    index: int,
    snapshot: Snapshot,
    few_shot: list[FewShotExample] | None = None,
    retry_limit: int = RETRY_LIMIT,
    decision_latency: float | None = None,
) -> Consultation:
    """Ask the decider, re-asking with the validator's message on bad answers."""
    prompt = build_prompt(snapshot, few_shot_library=few_shot)
    per_call = decider.decision_latency if decision_latency is None else decision_latency
    attempts: list[dict] = []
    decision = None
    feedback = None
    tokens_in = tokens_out = 0
    for _ in range(retry_limit + 1):
        rec: dict[str, Any] = {"prompt_tokens": prompt.token_estimate}
        try:
            reply: Reply = decider.decide(Request(index, snapshot, prompt, feedback))
        except (TransportError, MissingFixture) as exc:
            rec["error"] = str(exc)
            attempts.append(rec)
            feedback = str(exc)
            continue
        except Exception as exc:  # a broken decider must not abort the run
            log.warning("decider %s raised %r", decider.name, exc)
            rec["error"] = f"{type(exc).__name__}: {exc}"
            attempts.append(rec)
            feedback = str(exc)
            continue
        rec["raw"] = reply.text
        rec["tokens_in"] = reply.tokens_in
        rec["tokens_out"] = reply.tokens_out
        if reply.wall_latency is not None:
            rec["wall_latency"] = reply.wall_latency
        tokens_in += reply.tokens_in
        tokens_out += reply.tokens_out
        try:
            decision = parse_decision(reply.text)
        except SchemaError as exc:
            rec["error"] = exc.detail
            attempts.append(rec)
            feedback = exc.detail
            continue
        attempts.append(rec)
        break
    return Consultation(
        violation=violation,
        index=index,
        snapshot=snapshot,
        attempts=attempts,
        decision=decision,
        latency=per_call * len(attempts),
        tokens_in=tokens_in,
        tokens_out=tokens_out,
    )


def allocation_of(state: DeploymentState) -> dict:
    return {
        pid: {"replicas": len(state.replicas[pid]), "cpu_limit": state.limits[pid][0], "mem_limit": state.limits[pid][1]}
        for pid in state.chain()
    }


def _summary(state: DeploymentState) -> dict:
    return {
        "placement": {pid: state.nodes_of(pid) for pid in state.chain()},
        "limits": {pid: list(state.limits[pid]) for pid in state.chain()},
        "route_version": state.route_version,
    }


def apply_decision(
    now: float,
    consultation: Consultation,
    state: DeploymentState,
    topology: ContinuumTopology,
    intent: IntentSpec,
    loop: LoopState,
    events: EventLog,
    utilizations: Mapping[str, float] | None = None,
    on_change: Callable[[DeploymentState], None] | None = None,
) -> tuple[DeploymentState, list]:
    """Apply a consultation's actions in order; fall back when nothing sticks."""
    c = consultation
    events.emit(
        now,
        "decision_received",
        index=c.index,
        ok=c.decision is not None,
        attempts=c.attempts,
        tokens_in=c.tokens_in,
        tokens_out=c.tokens_out,
        latency=c.latency,
        decision=c.decision.to_dict() if c.decision else None,
    )
    applied: list = []
    before_alloc = allocation_of(state)

    def run(actions, origin: str) -> None:
        nonlocal state
        for action in actions:
            try:
                new = actuator.apply(action, state, topology, utilizations)
            except actuator.Rejected as exc:
                events.emit(now, "action_skipped", origin=origin, action=action_to_dict(action),
                            reason=exc.reason, detail=exc.detail)
                continue
            events.emit(
                now,
                "action_applied",
                origin=origin,
                action=action_to_dict(action),
                before=_summary(state),
                after=_summary(new),
                route_changes=actuator.route_diff(state, new),
            )
            state = new
            applied.append(action)

    if c.decision is not None:
        run(c.decision.actions, "decider")
    if not applied:
        why = "decider failed" if c.decision is None else (
            "empty action list" if not c.decision.actions else "no applicable action")
        fb = heuristic_decide(c.snapshot)
        events.emit(now, "fallback", reason=why, decision=fb.to_dict())
        run(fb.actions, "fallback")

    if allocation_of(state) != before_alloc:
        events.emit(now, "allocation", pods=allocation_of(state))
    if on_change is not None:
        on_change(state)
    loop.suppressed_until = max(loop.suppressed_until, now + intent.waiting_time)
    loop.in_flight = False
    events.emit(now, "waiting_started", until=loop.suppressed_until)
    return state, applied


def handle_violation(
    violation: Violation,
    state: DeploymentState,
    topology: ContinuumTopology,
    snapshot: Snapshot,
    intent: IntentSpec,
    decider: Decider,
    loop: LoopState | None = None,
    events: EventLog | None = None,
    few_shot: list[FewShotExample] | None = None,
    retry_limit: int = RETRY_LIMIT,
) -> tuple[DeploymentState, list, LoopState, EventLog]:
    """Synchronous episode: consult, charge the decision latency, apply, wait."""
    loop = loop or LoopState()
    events = events or EventLog()
    index = loop.violations
    loop.violations += 1
    loop.in_flight = True
    events.emit(violation.time, "violation", index=index, **violation.to_dict())
    events.emit(violation.time, "decision_requested", index=index, decider=decider.name)
    c = consult(decider, violation, index, snapshot, few_shot, retry_limit, intent.decision_latency)
    new_state, applied = apply_decision(violation.time + c.latency, c, state, topology, intent, loop, events)
    return new_state, applied, loop, events
