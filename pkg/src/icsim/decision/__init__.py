"""Pluggable decision makers.

Every intent-loop decider answers with raw text; the control loop parses it
with ``parse_decision`` so live, replayed and rule-based answers go through
the same validation and audit path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..model import Snapshot, canonical_json
from .heuristic import heuristic_decide
from .hpa import desired_replicas, hpa_decide
from .llm import LLMConfig, TransportError, chat
from .prompt import PromptDocument, build_prompt, estimate_tokens
from .schema import Decision, SchemaError, parse_decision

LLM_DECISION_LATENCY = 13.4


class MissingFixture(LookupError):
    pass


@dataclass(frozen=True)
class Reply:
    text: str
    tokens_in: int
    tokens_out: int
    wall_latency: float | None = None


@dataclass
class Request:
    """What the loop hands a decider for one consultation attempt."""

    index: int  # 0-based violation ordinal within the run
    snapshot: Snapshot
    prompt: PromptDocument
    feedback: str | None = None


class Decider:
    name = "decider"
    decision_latency = 0.0
    live = False

    def decide(self, request: Request) -> Reply:
        raise NotImplementedError


class HeuristicDecider(Decider):
    name = "heuristic"

    def __init__(self, decision_latency: float = 0.0):
        self.decision_latency = decision_latency

    def decide(self, request: Request) -> Reply:
        # no model is consulted, so no tokens are spent
        return Reply(heuristic_decide(request.snapshot).to_json(), 0, 0)


def fixture_path(path: str | Path) -> Path:
    """``path`` itself when it exists, else the packaged fixture of that name."""
    p = Path(path)
    if p.exists() or p.parent != Path("."):
        return p
    packaged = Path(str(resources.files("icsim.data"))) / "fixtures" / p.name
    return packaged if packaged.exists() else p


def load_fixture(path: str | Path) -> dict[int, str]:
    """Fixture file: one JSON record per line, ``{"violation_index": i, "body": ...}``.

    A body that is not a string is stored as its canonical JSON text.
    """
    entries: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        body = rec["body"]
        entries[int(rec["violation_index"])] = body if isinstance(body, str) else canonical_json(body)
    return entries


def fixture_decide(violation_index: int, fixture: str | Path | dict[int, str]) -> Decision:
    entries = fixture if isinstance(fixture, dict) else load_fixture(fixture)
    if violation_index not in entries:
        raise MissingFixture(f"missing-fixture: no entry for violation {violation_index}")
    return parse_decision(entries[violation_index])


class FixtureDecider(Decider):
    name = "fixture"

    def __init__(self, path: str | Path, decision_latency: float = LLM_DECISION_LATENCY):
        self.path = fixture_path(path)
        self.entries = load_fixture(self.path)
        self.decision_latency = decision_latency

    def decide(self, request: Request) -> Reply:
        if request.index not in self.entries:
            raise MissingFixture(f"missing-fixture: no entry for violation {request.index}")
        text = self.entries[request.index]
        return Reply(text, request.prompt.token_estimate, estimate_tokens(text))


class LLMDecider(Decider):
    name = "llm"
    live = True

    def __init__(self, config: LLMConfig | None = None, decision_latency: float = LLM_DECISION_LATENCY,
                 transport=None):
        self.config = config or LLMConfig.from_env()
        self.decision_latency = decision_latency
        self.transport = transport

    def decide(self, request: Request) -> Reply:
        r = chat(request.prompt, self.config, request.feedback, transport=self.transport)
        return Reply(r.text, r.tokens_in, r.tokens_out, r.latency)


@dataclass(frozen=True)
class HpaPolicy:
    """Baseline mode: the intent loop is off and a CPU-target autoscaler runs instead."""

    target: float

    @property
    def name(self) -> str:
        return f"hpa:{self.target:.2f}"


def make_decider(spec: str, decision_latency: float | None = None) -> Decider | HpaPolicy:
    """Parse ``llm``, ``heuristic``, ``fixture:<file>`` or ``hpa:<target>``."""
    kind, _, arg = spec.partition(":")
    kw = {} if decision_latency is None else {"decision_latency": decision_latency}
    if kind == "heuristic":
        return HeuristicDecider(**kw)
    if kind == "fixture":
        if not arg:
            raise ValueError("fixture decider needs a file: fixture:<file>")
        return FixtureDecider(arg, **kw)
    if kind == "llm":
        return LLMDecider(**kw)
    if kind == "hpa":
        target = float(arg)
        if not 0 < target <= 1:
            raise ValueError(f"hpa target must lie in (0, 1], got {target}")
        return HpaPolicy(target)
    raise ValueError(f"unknown decider {spec!r}")


__all__ = [
    "Decider",
    "Decision",
    "FixtureDecider",
    "HeuristicDecider",
    "HpaPolicy",
    "LLMConfig",
    "LLMDecider",
    "MissingFixture",
    "Reply",
    "Request",
    "SchemaError",
    "TransportError",
    "build_prompt",
    "desired_replicas",
    "fixture_decide",
    "heuristic_decide",
    "hpa_decide",
    "load_fixture",
    "make_decider",
    "parse_decision",
]
