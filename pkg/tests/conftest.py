from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

import pytest

from icsim.engine import Trace, run
from icsim.model import PodSpec, Snapshot
from icsim.scenario import ScenarioConfig, load_scenario

DATA = Path(str(resources.files("icsim.data")))
FIXTURES = DATA / "fixtures"


@lru_cache(maxsize=None)
def scenario(name: str) -> ScenarioConfig:
    return load_scenario(name)


@lru_cache(maxsize=None)
def trace(name: str, decider: str, seed: int | None = None) -> Trace:
    """Shared simulation runs; the engine is deterministic so caching is safe."""
    if decider.startswith("fixture:") and "/" not in decider:
        decider = f"fixture:{FIXTURES / decider.split(':', 1)[1]}"
    return run(scenario(name), decider, seed)


def first_snapshot(name: str = "computing", decider: str = "heuristic") -> Snapshot:
    ev = trace(name, decider).events_of("decision_requested")[0]
    return Snapshot(**{k: ev.payload["snapshot"][k] for k in
                       ("cluster_info", "network_info", "monitoring_data", "intent", "violation")})


def chain_pods(**overrides) -> list[PodSpec]:
    base = {
        "p1": PodSpec("p1", 1, 0.3, 312.0, 0.2, pinned_node="W1"),
        "p2": PodSpec("p2", 2, 0.3, 312.0, 0.2),
        "p3": PodSpec("p3", 3, 0.5, 512.0, 0.45),
        "p4": PodSpec("p4", 4, 0.3, 312.0, 0.2),
    }
    base.update(overrides)
    return list(base.values())


@pytest.fixture
def computing() -> ScenarioConfig:
    return scenario("computing")


@pytest.fixture
def networking() -> ScenarioConfig:
    return scenario("networking")


@pytest.fixture
def topo(computing):
    return computing.topology


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
