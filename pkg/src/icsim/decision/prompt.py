"""Prompt assembly for the decision maker."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..model import Snapshot, canonical_json

NARRATIVE = """\
You are the resource manager of an application deployed across an edge-cloud \
continuum. Hosts run Kubernetes pods and are wired through software-defined \
switches. Requests enter at the ingress host, pass through a chain of \
microservice pods in chain_index order and return to the ingress host. \
Each pod may run several replicas behind a load-balancing service; every \
replica is limited to cpu_limit cores and mem_limit MiB. Traffic between two \
hosts follows an installed switch path, and congested or failed links on that \
path add delay to every request.

The operator's intent is that the exponential moving average of the \
response time stays between the lower and upper thresholds. A violation has \
just been detected. Using the cluster information, the network information \
and the monitoring windows (pre-violation windows oldest first, then the \
window containing the violation), find the source of the violation and \
recommend corrective actions.

Allowed actions: service_placement (move every replica of a pod to a node), \
horizontal_scaling (set a pod's replica count), vertical_scaling (set a pod's \
per-replica cpu_limit and mem_limit) and flow_scheduling (install a switch \
path for a host-to-host flow). Reply with a single JSON object that follows \
the templates and nothing else."""

SOURCE_TEMPLATE = {
    "source": {
        "category": "cpu_shortage | memory_shortage | link_congestion | link_failure | over_provisioning | other",
        "detail": "one sentence naming the affected pod, node or link",
    }
}

ACTION_TEMPLATE = {
    "actions": [
        {"type": "service_placement", "pod": "<pod id>", "target_node": "<node id>"},
        {"type": "horizontal_scaling", "pod": "<pod id>", "replicas": "<int 1..max_replicas>"},
        {"type": "vertical_scaling", "pod": "<pod id>", "cpu_limit": "<cores >= cpu_floor>", "mem_limit": "<MiB>"},
        {"type": "flow_scheduling", "flow": ["<src host>", "<dst host>"], "path": ["<switch>", "..."]},
    ]
}


@dataclass(frozen=True)
class FewShotExample:
    name: str
    snapshot: dict
    decision: dict


@dataclass
class PromptDocument:
    narrative: str
    cluster_info: str
    network_info: str
    monitoring_data: str
    intent_block: str
    few_shot: list[tuple[str, str]] = field(default_factory=list)
    token_estimate: int = 0

    @property
    def system(self) -> str:
        return self.narrative

    @property
    def user(self) -> str:
        parts = [
            "## Intent and violation\n" + self.intent_block,
            "## Cluster information\n" + self.cluster_info,
            "## Network information\n" + self.network_info,
            "## Monitoring data\n" + self.monitoring_data,
            "## Source of violation template\n" + canonical_json(SOURCE_TEMPLATE),
            "## Recommended action template\n" + canonical_json(ACTION_TEMPLATE),
        ]
        for i, (snap, dec) in enumerate(self.few_shot, 1):
            parts.append(f"## Example {i}\nInput:\n{snap}\nAnswer:\n{dec}")
        parts.append("## Answer")
        return "\n\n".join(parts)

    def messages(self) -> list[dict]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]

    def text(self) -> str:
        return self.system + "\n\n" + self.user


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def load_few_shot(directory: str | Path | None = None) -> list[FewShotExample]:
    """Worked examples, sorted by file name. Defaults to the packaged library."""
    if directory is None:
        root = resources.files("icsim.data").joinpath("fewshot")
        files = sorted((p for p in root.iterdir() if p.name.endswith(".json")), key=lambda p: p.name)
        texts = [(p.name, p.read_text(encoding="utf-8")) for p in files]
    else:
        files = sorted(Path(directory).glob("*.json"))
        texts = [(p.name, p.read_text(encoding="utf-8")) for p in files]
    out = []
    for name, text in texts:
        d = json.loads(text)
        out.append(FewShotExample(name.removesuffix(".json"), d["snapshot"], d["decision"]))
    return out


def build_prompt(
    snapshot: Snapshot,
    intent: dict | None = None,
    violation: dict | None = None,
    few_shot_library: list[FewShotExample] | None = None,
) -> PromptDocument:
    intent = snapshot.intent if intent is None else intent
    violation = snapshot.violation if violation is None else violation
    examples = load_few_shot() if few_shot_library is None else few_shot_library
    doc = PromptDocument(
        narrative=NARRATIVE,
        cluster_info=canonical_json(snapshot.cluster_info),
        network_info=canonical_json(snapshot.network_info),
        monitoring_data=canonical_json(snapshot.monitoring_data),
        intent_block=canonical_json({"intent": intent, "violation": violation}),
        few_shot=[(canonical_json(ex.snapshot), canonical_json(ex.decision)) for ex in examples],
    )
    doc.token_estimate = estimate_tokens(doc.text())
    return doc
