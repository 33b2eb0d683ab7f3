"""Chat-completions client for a live LLM decider."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import httpx

from .prompt import PromptDocument, estimate_tokens
from .schema import Decision, parse_decision

ENV_BASE_URL = "ICSIM_LLM_BASE_URL"
ENV_MODEL = "ICSIM_LLM_MODEL"
ENV_API_KEY = "ICSIM_LLM_API_KEY"


class TransportError(RuntimeError):
    """The endpoint could not be reached, timed out or answered with an error."""


@dataclass(frozen=True)
class LLMConfig:
    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 60.0

    @classmethod
    def from_env(cls, timeout: float = 60.0) -> "LLMConfig":
        base = os.environ.get(ENV_BASE_URL)
        model = os.environ.get(ENV_MODEL)
        if not base or not model:
            raise TransportError(f"set {ENV_BASE_URL} and {ENV_MODEL} to use the llm decider")
        return cls(base.rstrip("/"), model, os.environ.get(ENV_API_KEY, ""), timeout)


@dataclass(frozen=True)
class LLMReply:
    text: str
    tokens_in: int
    tokens_out: int
    latency: float  # wall-clock seconds


def retry_note(error: str) -> str:
    return (
        "\n\nYour previous answer was rejected by the validator: "
        f"{error}\nReply again with one JSON object that follows the templates exactly."
    )


def chat(
    prompt: PromptDocument,
    config: LLMConfig,
    feedback: str | None = None,
    transport: httpx.BaseTransport | None = None,
) -> LLMReply:
    user = prompt.user + (retry_note(feedback) if feedback else "")
    body = {
        "model": config.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": user},
        ],
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    t0 = time.perf_counter()
    try:
        with httpx.Client(timeout=config.timeout, transport=transport) as client:
            resp = client.post(f"{config.base_url}/chat/completions", json=body, headers=headers)
            resp.raise_for_status()
            data = resp.json()
    except (httpx.HTTPError, ValueError) as exc:
        raise TransportError(f"{type(exc).__name__}: {exc}") from exc
    latency = time.perf_counter() - t0
    try:
        text = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion payload: {exc}") from exc
    usage = data.get("usage") or {}
    return LLMReply(
        text=text,
        tokens_in=int(usage.get("prompt_tokens", estimate_tokens(prompt.system + user))),
        tokens_out=int(usage.get("completion_tokens", estimate_tokens(text))),
        latency=latency,
    )


def llm_decide(
    prompt: PromptDocument,
    config: LLMConfig,
    transport: httpx.BaseTransport | None = None,
) -> tuple[Decision, LLMReply]:
    """One request at temperature 0; raises TransportError or SchemaError."""
    reply = chat(prompt, config, transport=transport)
    return parse_decision(reply.text), reply
