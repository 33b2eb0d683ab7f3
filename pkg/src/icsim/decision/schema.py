"""Decision type, strict parsing and the response extractor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema

from ..actions import (
    Action,
    FlowScheduling,
    HorizontalScaling,
    ServicePlacement,
    VerticalScaling,
    action_from_dict,
    action_to_dict,
)
from ..model import canonical_json

CATEGORIES = (
    "cpu_shortage",
    "memory_shortage",
    "link_congestion",
    "link_failure",
    "over_provisioning",
    "other",
)


class SchemaError(ValueError):
    """Decider output that is not a well-formed Decision."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


@dataclass(frozen=True)
class Decision:
    category: str
    detail: str = ""
    actions: tuple[Action, ...] = ()

    def to_dict(self) -> dict:
        return {
            "source": {"category": self.category, "detail": self.detail},
            "actions": [action_to_dict(a) for a in self.actions],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


@lru_cache(maxsize=1)
def decision_schema() -> dict:
    text = resources.files("icsim.data").joinpath("decision.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@lru_cache(maxsize=1)
def _validator() -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(decision_schema())


def extract_json_object(text: str) -> dict | None:
    """First balanced ``{...}`` block in ``text`` that parses as a JSON object."""
    decoder = json.JSONDecoder()
    i = text.find("{")
    while i != -1:
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        i = text.find("{", i + 1)
    return None


def _error_message(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "enum" and err.absolute_path and err.absolute_path[-1] == "type":
        return f"{where}: unknown action type {err.instance!r}"
    if err.validator == "additionalProperties":
        return f"{where}: unknown field(s): {err.message}"
    return f"{where}: {err.message}"


def validate_decision_dict(obj: object) -> None:
    if not isinstance(obj, dict):
        raise SchemaError("decision must be a JSON object")
    errors = sorted(_validator().iter_errors(obj), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise SchemaError("; ".join(_error_message(e) for e in errors))


def parse_decision(text: str) -> Decision:
    """Strictly parse the first well-formed JSON object in ``text``."""
    obj = extract_json_object(text)
    if obj is None:
        raise SchemaError("no JSON object found in response")
    validate_decision_dict(obj)
    src = obj["source"]
    actions = tuple(action_from_dict(a) for a in obj.get("actions", []))
    return Decision(src["category"], src.get("detail", ""), actions)
