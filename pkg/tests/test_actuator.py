import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsim import actuator
from icsim.actions import FlowScheduling, HorizontalScaling, ServicePlacement, VerticalScaling
from icsim.actuator import Rejected, compute_route, recompute_all_routes
from icsim.model import ContinuumTopology, DeploymentState, check_state, derive_flows, link_key

from conftest import scenario, chain_pods
from oracles import brute_route, random_switch_graph

COMPUTING_INIT = {"p1": "W1", "p2": "W2", "p3": "W3", "p4": "W3"}


@pytest.fixture
def init_state(topo):
    return recompute_all_routes(DeploymentState.initial(chain_pods(), COMPUTING_INIT), topo)


def test_place_p3_on_worker2(init_state, topo):
    new = actuator.apply(ServicePlacement("p3", "W2"), init_state, topo)
    assert {p: new.nodes_of(p) for p in new.chain()} == {"p1": ["W1"], "p2": ["W2"], "p3": ["W2"], "p4": ["W3"]}
    assert check_state(new, topo) == []
    assert set(new.routes) == set(derive_flows(new, topo))
    assert init_state.nodes_of("p3") == ["W3"]  # input untouched


def test_scaling_to_current_count_is_noop(init_state, topo):
    new = actuator.apply(HorizontalScaling("p2", 1), init_state, topo)
    assert new.replicas == init_state.replicas and new.route_version == init_state.route_version


def test_vertical_scale_beyond_node(init_state, topo):
    with pytest.raises(Rejected) as exc:
        actuator.apply(VerticalScaling("p1", 50.0, 312.0), init_state, topo)
    assert exc.value.reason == "insufficient_capacity"


def test_rejections(init_state, topo):
    cases = [
        (HorizontalScaling("p3", 6), "replica_bounds"),
        (HorizontalScaling("p3", 0), "replica_bounds"),
        (ServicePlacement("p9", "W1"), "unknown_id"),
        (ServicePlacement("p3", "W9"), "unknown_id"),
        (ServicePlacement("p1", "W2"), "insufficient_capacity"),  # pinned
        (ServicePlacement("p3", "M"), "insufficient_capacity"),  # not schedulable
        (VerticalScaling("p3", 0.1, 512), "insufficient_capacity"),  # below cpu floor
        (FlowScheduling(("W3", "M"), ("S3", "S4", "S1", "S2")), "invalid_path"),
        (FlowScheduling(("W3", "M"), ("S3", "S9", "S2")), "unknown_id"),
        (FlowScheduling(("W1", "W3"), ("S2", "S3")), "unknown_id"),  # not a journey flow
    ]
    for action, reason in cases:
        with pytest.raises(Rejected) as exc:
            actuator.apply(action, init_state, topo)
        assert exc.value.reason == reason, action


def test_scale_out_and_newest_first_scale_in(init_state, topo):
    three = actuator.apply(HorizontalScaling("p3", 3), init_state, topo)
    assert [r.replica_id for r in three.replicas["p3"]] == ["p3-r0", "p3-r1", "p3-r2"]
    one = actuator.apply(HorizontalScaling("p3", 1), three, topo)
    assert [r.replica_id for r in one.replicas["p3"]] == ["p3-r0"]


def test_flow_scheduling_installs_path(init_state, topo):
    new = actuator.apply(FlowScheduling(("W3", "M"), ("S3", "S1", "S2")), init_state, topo)
    assert new.routes[("W3", "M")] == ["S3", "S1", "S2"]
    assert new.route_version == init_state.route_version + 1


def test_compute_route_examples(topo):
    assert compute_route(topo, "S3", "S2", avoid=[("S2", "S3")]) == ["S3", "S1", "S2"]
    assert compute_route(topo, "S3", "S2", {"S2-S3": 0.97}) == ["S3", "S1", "S2"]
    assert compute_route(topo, "S4", "S4") == ["S4"]
    down = ContinuumTopology(topo.nodes, topo.switches, [replace(l, up=False) for l in topo.links], "M")
    assert compute_route(down, "S2", "S4") is None


def test_recompute_is_idempotent(init_state, topo):
    again = recompute_all_routes(init_state, topo)
    assert again.routes == init_state.routes and again.route_version == init_state.route_version


def test_congestion_reroutes_return_leg(topo):
    state = recompute_all_routes(DeploymentState.initial(chain_pods(), {**COMPUTING_INIT}), topo)
    assert state.routes[("W3", "M")] == ["S3", "S2"]
    hot = recompute_all_routes(state, topo, {"S2-S3": 0.95})
    assert hot.routes[("W3", "M")] == ["S3", "S1", "S2"]
    assert hot.route_version == state.route_version + 1


def test_routes_consistent_after_relocation(init_state, topo):
    new = actuator.apply(ServicePlacement("p3", "W1"), init_state, topo)
    for (src, dst), path in new.routes.items():
        assert path[0] == topo.switch_of(src) and path[-1] == topo.switch_of(dst)
    assert list(new.routes) == derive_flows(new, topo)


def test_route_oracle_on_fixture(topo):
    utils = {"S2-S3": 0.95, "S1-S2": 0.3}
    for src in topo.switches:
        for dst in topo.switches:
            for avoid in [()] + [(l.key,) for l in topo.links]:
                assert compute_route(topo, src, dst, utils, avoid) == brute_route(topo, src, dst, utils, avoid)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
def test_route_oracle_random_graphs(seed, n):
    rng = random.Random(seed)
    t, utils = random_switch_graph(rng, n)
    src, dst = rng.choice(t.switches), rng.choice(t.switches)
    avoid = [rng.choice(t.links).key] if t.links else []
    got = compute_route(t, src, dst, utils, avoid)
    assert got == brute_route(t, src, dst, utils, avoid)
    if got:
        assert all(link_key(a, b) not in avoid for a, b in zip(got, got[1:]))


action_st = st.one_of(
    st.builds(ServicePlacement, st.sampled_from(["p1", "p2", "p3", "p4"]), st.sampled_from(["M", "W1", "W2", "W3"])),
    st.builds(HorizontalScaling, st.sampled_from(["p1", "p2", "p3", "p4"]), st.integers(0, 6)),
    st.builds(VerticalScaling, st.sampled_from(["p1", "p2", "p3", "p4"]), st.floats(0.1, 40), st.floats(1, 70000)),
)


@settings(max_examples=100, deadline=None)
@given(actions=st.lists(action_st, max_size=8))
def test_actions_preserve_invariants(actions):
    topo = scenario("computing").topology
    state = recompute_all_routes(DeploymentState.initial(chain_pods(), COMPUTING_INIT), topo)
    for a in actions:
        before = state.copy()
        try:
            state = actuator.apply(a, state, topo)
        except Rejected:
            assert state.replicas == before.replicas and state.limits == before.limits
        assert check_state(state, topo) == []
