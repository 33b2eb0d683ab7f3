"""Deterministic discrete-event simulation of the request chain.

Closed-loop users send a request to the first pod, which is passed along
the chain and returned to the ingress host. Every replica is a FIFO single
server (processor sharing behind ``control.discipline: ps``); hops between
hosts cost a store-and-forward transfer over the installed route.

The loop over the event heap also drives the intent watch loop (or the HPA
baseline) and closes one telemetry sample per second.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from . import actuator
from .actions import HorizontalScaling, action_to_dict
from .decision import Decider, HpaPolicy, make_decider
from .decision.hpa import COOLDOWN, METRIC_WINDOW, SYNC_PERIOD, hpa_decide
from .decision.prompt import load_few_shot
from .mano import ControlEvent, EventLog, LoopState, allocation_of, apply_decision, consult, watch_step
from .model import DeploymentState, PodSpec, check_state, link_name, snapshot
from .network import NetworkState, payload_megabits
from .scenario import ScenarioConfig
from .telemetry import EmaState, Sample, aggregate, ema_update, make_window

log = logging.getLogger(__name__)

SAMPLE_PERIOD = 1.0
RETRY_DELAY = 1.0  # wait before re-trying a hop whose route crosses a failed link
MEM_BASE_FRACTION = 0.35  # resident share of mem_limit per idle replica
MEM_PER_REQUEST = 6.0  # MiB held per request inside a pod


def service_time(pod: PodSpec, concurrent_in_service: int = 1, cpu_limit: float | None = None) -> float:
    """Service time of one request entering ``pod``.

    FIFO: ``work_demand / cpu_limit + io_time``. Queueing delay is produced by
    the event loop, so ``concurrent_in_service`` only matters to the
    processor-sharing mode, which stretches this base time itself.
    """
    if concurrent_in_service < 1:
        raise ValueError("concurrent_in_service must be >= 1")
    limit = pod.cpu_limit if cpu_limit is None else cpu_limit
    return pod.work_demand / limit + pod.io_time


@dataclass
class Stage:
    name: str  # pod id, or "return" for the leg back to the ingress host
    replica: str | None = None
    transfer: float = 0.0
    queue: float = 0.0
    service: float = 0.0
    delay: float = 0.0  # ext_latency of the pod

    def total(self) -> float:
        return self.transfer + self.queue + self.service + self.delay


@dataclass
class RequestRecord:
    request_id: int
    user: int
    arrival: float
    completion: float | None = None
    rt: float | None = None
    ema_after: float | None = None
    stages: list[Stage] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.completion is not None

    def breakdown_total(self) -> float:
        return sum(s.total() for s in self.stages)


@dataclass
class Trace:
    scenario: str
    decider: str
    seed: int
    horizon: float
    requests: list[RequestRecord]
    samples: list[Sample]
    events: list[ControlEvent]
    admitted: int
    hpa_scale_ups: int = 0
    final_state: DeploymentState | None = None

    @property
    def completed(self) -> list[RequestRecord]:
        return [r for r in self.requests if r.done]

    def ema_points(self) -> list[tuple[float, float]]:
        """(completion, EMA after it) in completion order, the input the metrics expect."""
        done = sorted(self.completed, key=lambda r: (r.completion, r.request_id))
        return [(r.completion, r.ema_after) for r in done]

    @property
    def open_requests(self) -> int:
        return sum(1 for r in self.requests if not r.done)

    def events_of(self, kind: str) -> list[ControlEvent]:
        return [e for e in self.events if e.kind == kind]


@dataclass
class _User:
    uid: int
    active: bool = True


@dataclass
class _Job:
    record: RequestRecord
    user: _User
    stage: int = 0
    stage_arrival: float = 0.0
    host: str = ""


class _Server:
    """Runtime of one replica: its queue plus CPU-time accounting."""

    def __init__(self, replica_id: str, pod: str, node: str, t: float):
        self.replica_id = replica_id
        self.pod = pod
        self.node = node
        self.queue: deque[_Job] = deque()
        self.current: _Job | None = None
        self.ps_jobs: dict[int, list] = {}  # request id -> [job, remaining, cpu_fraction]
        self.ps_last = t
        self.version = 0
        self.draining = False
        self.inbound = 0
        self.last = t
        self.cpu_rate = 0.0  # busy fraction of the limit spent on CPU
        self.cores = 0.0

    def in_system(self) -> int:
        return len(self.queue) + (self.current is not None) + len(self.ps_jobs)

    def idle(self) -> bool:
        return self.in_system() == 0 and self.inbound == 0


class Simulation:
    def __init__(self, scenario: ScenarioConfig, decider: Decider | HpaPolicy | str | None = None,
                 seed: int | None = None, duration: float | None = None):
        self.sc = scenario
        if decider is None:
            decider = scenario.control.decider
        if isinstance(decider, str):
            decider = make_decider(decider, scenario.intent.decision_latency)
        self.decider = decider
        self.hpa = decider if isinstance(decider, HpaPolicy) else None
        self.seed = scenario.seed if seed is None else seed
        self.horizon = scenario.horizon if duration is None else float(duration)
        if self.horizon <= 0:
            raise ValueError("duration must be positive")
        self.rng = random.Random(self.seed)

        self.net = NetworkState(scenario.topology)
        for inj in scenario.events:
            for item in inj.items:
                self.net.inject(item)

        self.events = EventLog()
        self.loop = LoopState()
        self.ema = EmaState(scenario.telemetry.alpha)
        self.state = actuator.recompute_all_routes(scenario.initial_state(), scenario.topology)
        self.chain = self.state.chain()
        self.few_shot = load_few_shot() if not self.hpa else []

        self._heap: list[tuple[float, int, str, Any]] = []
        self._seq = 0
        self.now = 0.0
        self.servers: dict[str, _Server] = {}
        self._rr: dict[str, int] = {p: 0 for p in self.chain}
        self.users: list[_User] = []
        self._next_uid = 0
        self.target_users = 0
        self._ramp_pending = False
        self.requests: list[RequestRecord] = []
        self.samples: list[Sample] = []
        self.hpa_scale_ups = 0
        self._hpa_last_change: dict[str, float] = {}

        # per-sample accumulators
        self._bin_start = 0.0
        self._bin_rts: list[float] = []
        self._pod_busy: dict[str, float] = {}
        self._pod_alive: dict[str, float] = {}
        self._node_cores: dict[str, float] = {}
        self._link_bits: dict[int, dict[str, float]] = {}

    # -- event plumbing -----------------------------------------------------

    def _push(self, t: float, kind: str, data: Any = None) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, data))
        self._seq += 1

    def run(self) -> Trace:
        self.events.emit(0.0, "allocation", pods=allocation_of(self.state))
        self._sync_servers()
        t = 0.0
        for ph in self.sc.load.phases:
            if t < self.horizon:
                self._push(t, "phase", ph.user_count)
            t += ph.duration
        for inj in self.sc.events:
            self._push(inj.time, "inject", inj)
        k = 1
        while k * SAMPLE_PERIOD < self.horizon - 1e-9:
            self._push(k * SAMPLE_PERIOD, "tick")
            k += 1
        self._push(self.horizon, "tick")
        if self.hpa:
            k = 1
            while k * SYNC_PERIOD < self.horizon:
                self._push(k * SYNC_PERIOD, "hpa")
                k += 1

        handlers = {
            "phase": self._on_phase,
            "ramp": self._on_ramp,
            "issue": self._on_issue,
            "arrive": self._on_arrive,
            "depart": self._on_depart,
            "ps_depart": self._on_ps_depart,
            "hop": self._on_hop,
            "finish": self._finish,
            "tick": self._on_tick,
            "inject": self._on_inject,
            "apply": self._on_apply,
            "hpa": self._on_hpa,
        }
        while self._heap and self._heap[0][0] <= self.horizon:
            t, _, kind, data = heapq.heappop(self._heap)
            self.now = t
            handlers[kind](data)
        return Trace(
            scenario=self.sc.name,
            decider=self.decider.name,
            seed=self.seed,
            horizon=self.horizon,
            requests=self.requests,
            samples=self.samples,
            events=self.events.events,
            admitted=len(self.requests),
            hpa_scale_ups=self.hpa_scale_ups,
            final_state=self.state,
        )

    # -- load ---------------------------------------------------------------

    def _on_phase(self, users: int) -> None:
        self.target_users = users
        self.events.emit(self.now, "load_phase", users=users)
        if not self._ramp_pending:
            self._ramp_pending = True
            self._push(self.now, "ramp")

    def _on_ramp(self, _: Any) -> None:
        self._ramp_pending = False
        active = [u for u in self.users if u.active]
        if len(active) < self.target_users:
            u = _User(self._next_uid)
            self._next_uid += 1
            self.users.append(u)
            self._push(self.now, "issue", u)
        elif len(active) > self.target_users:
            active[-1].active = False  # newest user leaves first
        else:
            return
        if sum(u.active for u in self.users) != self.target_users:
            self._ramp_pending = True
            self._push(self.now + 1.0 / self.sc.load.spawn_rate, "ramp")

    def _think(self) -> float:
        ld = self.sc.load
        return ld.think_time + self.rng.uniform(-ld.think_jitter, ld.think_jitter)

    def _on_issue(self, user: _User) -> None:
        if not user.active:
            return
        rec = RequestRecord(len(self.requests) + 1, user.uid, self.now)
        self.requests.append(rec)
        self._on_hop(_Job(rec, user, 0, self.now, self.sc.topology.ingress_host))

    # -- journey ------------------------------------------------------------

    def _next_server(self, pod: str) -> _Server:
        reps = self.state.replicas[pod]
        r = reps[self._rr[pod] % len(reps)]
        self._rr[pod] += 1
        return self.servers[r.replica_id]

    def _on_hop(self, job: _Job) -> None:
        """Move ``job`` from its current host towards its next stage."""
        rec = job.record
        last = job.stage >= len(self.chain)
        if job.stage == len(rec.stages):
            rec.stages.append(Stage("return" if last else self.chain[job.stage]))
        stage = rec.stages[job.stage]
        server = None if last else self._next_server(self.chain[job.stage])
        dst = self.sc.topology.ingress_host if last else server.node
        if job.host == dst:
            wait = 0.0
        else:
            route = self.state.routes.get((job.host, dst))
            if route is None:
                route = actuator.compute_route(
                    self.net.topology_at(self.now), self.sc.topology.switch_of(job.host),
                    self.sc.topology.switch_of(dst))
            if route is None or any(not self.net.is_up(a, b, self.now) for a, b in zip(route, route[1:])):
                stage.transfer += RETRY_DELAY
                self._push(self.now + RETRY_DELAY, "hop", job)
                return
            wait = self.net.transfer_time(route, self.sc.load.request_payload, self.now)
            self._account_transfer(route, self.now, wait)
        stage.transfer += wait
        if last:
            self._push(self.now + wait, "finish", job)
        else:
            server.inbound += 1
            stage.replica = server.replica_id
            self._push(self.now + wait, "arrive", (job, server))

    def _account_transfer(self, route: list[str], t0: float, dur: float) -> None:
        mb = payload_megabits(self.sc.load.request_payload)
        names = [link_name(a, b) for a, b in zip(route, route[1:])]
        if dur <= 0:
            b = int(t0 // SAMPLE_PERIOD)
            for n in names:
                self._link_bits.setdefault(b, {}).setdefault(n, 0.0)
                self._link_bits[b][n] += mb
            return
        t1 = t0 + dur
        b = int(t0 // SAMPLE_PERIOD)
        while b * SAMPLE_PERIOD < t1:
            lo, hi = max(t0, b * SAMPLE_PERIOD), min(t1, (b + 1) * SAMPLE_PERIOD)
            share = mb * (hi - lo) / dur
            bucket = self._link_bits.setdefault(b, {})
            for n in names:
                bucket[n] = bucket.get(n, 0.0) + share
            b += 1

    def _finish(self, job: _Job) -> None:
        rec = job.record
        rec.completion = self.now
        rec.rt = self.now - rec.arrival
        self.ema = ema_update(self.ema, rec.rt)
        rec.ema_after = self.ema.value
        self._bin_rts.append(rec.rt)
        if job.user.active:
            self._push(self.now + self._think(), "issue", job.user)
        if self.hpa is None:
            v = watch_step(self.now, self.ema, self.sc.intent, self.loop, self.sc.telemetry.min_requests)
            if v is not None:
                self._on_violation(v)

    def _on_arrive(self, data: tuple[_Job, _Server]) -> None:
        job, server = data
        server.inbound -= 1
        job.stage_arrival = self.now
        self._accrue(server)
        if self.sc.control.discipline == "ps":
            self._ps_add(server, job)
        elif server.current is None:
            self._start(server, job)
        else:
            server.queue.append(job)

    def _start(self, server: _Server, job: _Job) -> None:
        cpu = self.state.limits[server.pod][0]
        spec = self.state.pods[server.pod]
        svc = service_time(spec, 1, cpu)
        stage = job.record.stages[job.stage]
        stage.queue = self.now - job.stage_arrival
        stage.service = svc
        server.current = job
        cpu_time = spec.work_demand / cpu
        server.cpu_rate = cpu_time / svc if svc > 0 else 0.0
        server.cores = server.cpu_rate * cpu
        self._push(self.now + svc, "depart", server)

    def _on_depart(self, server: _Server) -> None:
        self._accrue(server)
        job = server.current
        server.current = None
        server.cpu_rate = server.cores = 0.0
        if server.queue:
            self._start(server, server.queue.popleft())
        self._advance(job, server.node)
        self._maybe_retire(server)

    def _advance(self, job: _Job, host: str) -> None:
        job.host = host
        delay = self.state.pods[self.chain[job.stage]].ext_latency
        job.record.stages[job.stage].delay = delay
        job.stage += 1
        if delay > 0:
            self._push(self.now + delay, "hop", job)
        else:
            self._on_hop(job)

    # processor sharing: every job in the replica progresses at 1/n speed

    def _ps_progress(self, server: _Server) -> None:
        n = len(server.ps_jobs)
        if n:
            dt = (self.now - server.ps_last) / n
            for entry in server.ps_jobs.values():
                entry[1] -= dt
        server.ps_last = self.now

    def _ps_reschedule(self, server: _Server) -> None:
        server.version += 1
        n = len(server.ps_jobs)
        if not n:
            server.cpu_rate = server.cores = 0.0
            return
        cpu = self.state.limits[server.pod][0]
        server.cpu_rate = sum(e[2] for e in server.ps_jobs.values()) / n
        server.cores = server.cpu_rate * cpu
        rid, entry = min(server.ps_jobs.items(), key=lambda kv: (kv[1][1], kv[0]))
        self._push(self.now + max(entry[1], 0.0) * n, "ps_depart", (server, server.version))

    def _ps_add(self, server: _Server, job: _Job) -> None:
        self._ps_progress(server)
        spec = self.state.pods[server.pod]
        cpu = self.state.limits[server.pod][0]
        svc = service_time(spec, len(server.ps_jobs) + 1, cpu)
        frac = (spec.work_demand / cpu) / svc if svc > 0 else 0.0
        server.ps_jobs[job.record.request_id] = [job, svc, frac]
        self._ps_reschedule(server)

    def _on_ps_depart(self, data: tuple[_Server, int]) -> None:
        server, version = data
        if version != server.version:
            return
        self._accrue(server)
        self._ps_progress(server)
        rid = min(server.ps_jobs, key=lambda k: (server.ps_jobs[k][1], k))
        job = server.ps_jobs.pop(rid)[0]
        stage = job.record.stages[job.stage]
        stage.queue = 0.0
        stage.service = self.now - job.stage_arrival
        self._ps_reschedule(server)
        self._advance(job, server.node)
        self._maybe_retire(server)

    # -- replicas -------------------------------------------------------------

    def _sync_servers(self, state: DeploymentState | None = None) -> None:
        state = state or self.state
        live = {r.replica_id: (pid, r.node_id) for pid, reps in state.replicas.items() for r in reps}
        for rid, (pid, node) in live.items():
            if rid not in self.servers:
                self.servers[rid] = _Server(rid, pid, node, self.now)
        for rid, srv in list(self.servers.items()):
            if rid not in live and not srv.draining:
                srv.draining = True
                self._maybe_retire(srv)

    def _maybe_retire(self, server: _Server) -> None:
        if server.draining and server.idle() and server.replica_id in self.servers:
            self._accrue(server)
            del self.servers[server.replica_id]

    def _accrue(self, server: _Server) -> None:
        dt = self.now - server.last
        if dt > 0:
            self._pod_busy[server.pod] = self._pod_busy.get(server.pod, 0.0) + dt * server.cpu_rate
            self._pod_alive[server.pod] = self._pod_alive.get(server.pod, 0.0) + dt
            self._node_cores[server.node] = self._node_cores.get(server.node, 0.0) + dt * server.cores
        server.last = self.now

    # -- telemetry ------------------------------------------------------------

    def _on_tick(self, _: Any) -> None:
        start = self._bin_start
        span = self.now - start
        if span <= 1e-12:
            return
        for srv in list(self.servers.values()):
            self._accrue(srv)
        pods = {}
        in_pod: dict[str, int] = {}
        n_rep: dict[str, int] = {}
        for srv in self.servers.values():
            in_pod[srv.pod] = in_pod.get(srv.pod, 0) + srv.in_system()
            n_rep[srv.pod] = n_rep.get(srv.pod, 0) + 1
        for pid in self.chain:
            alive = self._pod_alive.get(pid, 0.0)
            util = self._pod_busy.get(pid, 0.0) / alive if alive > 0 else 0.0
            mem_limit = self.state.limits[pid][1]
            cap = n_rep.get(pid, 0) * mem_limit
            mem = min(cap, n_rep.get(pid, 0) * MEM_BASE_FRACTION * mem_limit + MEM_PER_REQUEST * in_pod.get(pid, 0))
            pods[pid] = {"cpu_utilization": util, "mem_used": mem, "replicas": float(len(self.state.replicas[pid]))}
        nodes = {
            n.id: {"cpu_utilization": self._node_cores.get(n.id, 0.0) / (n.cpu_capacity * span)}
            for n in self.sc.topology.nodes
        }
        links = {}
        app = self._link_bits.pop(int(start // SAMPLE_PERIOD), {})
        for l in self.sc.topology.links:
            name = l.name
            up = self.net.is_up(*l.key, start)
            bg = self.net.background_megabits(*l.key, start, self.now) if up else 0.0
            links[name] = {
                "utilization": (app.get(name, 0.0) + bg) / (l.capacity * span),
                "up": 1.0 if up else 0.0,
            }
        self.samples.append(Sample(start, list(self._bin_rts), pods, nodes, links))
        self._bin_rts = []
        self._pod_busy, self._pod_alive, self._node_cores = {}, {}, {}
        self._bin_start = self.now

    def _recent_link_utils(self) -> dict[str, float]:
        w = make_window(0, self.now - self.sc.telemetry.window_len, self.now, self.samples)
        return {name: m["utilization"] for name, m in w.links.items()}

    # -- disturbances -----------------------------------------------------------

    def _on_inject(self, inj) -> None:
        self.events.emit(self.now, "injected", **inj.to_dict())

    # -- intent loop ------------------------------------------------------------

    def _on_violation(self, v) -> None:
        idx = self.loop.violations
        self.loop.violations += 1
        self.loop.in_flight = True
        self.events.emit(self.now, "violation", index=idx, **v.to_dict())
        tel = self.sc.telemetry
        agg = aggregate(self.samples, tel.window_len, tel.k_pre, self.now, history_start=0.0)
        snap = snapshot(self.state, self.net.topology_at(self.now), agg.to_dict(), self.sc.intent.to_dict(),
                        v.to_dict())
        self.events.emit(self.now, "decision_requested", index=idx, decider=self.decider.name,
                         snapshot=json.loads(snap.to_json()))
        c = consult(self.decider, v, idx, snap, self.few_shot, self.sc.control.retry_limit,
                    self.sc.intent.decision_latency)
        self._push(self.now + c.latency, "apply", c)

    def _on_apply(self, consultation) -> None:
        topo = self.net.topology_at(self.now)
        self.state, _ = apply_decision(
            self.now, consultation, self.state, topo, self.sc.intent, self.loop, self.events,
            self._recent_link_utils(),
        )
        self._check_invariants(topo)
        self._sync_servers()

    def _check_invariants(self, topo) -> None:
        problems = [p for p in check_state(self.state, topo) if not p.startswith("link-down")]
        if problems:
            raise RuntimeError(f"deployment invariant broken at t={self.now:g}: {problems}")

    # -- HPA baseline -----------------------------------------------------------

    def _on_hpa(self, _: Any) -> None:
        recent = [s for s in self.samples if s.t >= self.now - METRIC_WINDOW - 1e-9]
        if not recent:
            return
        utils = {p: sum(s.pods[p]["cpu_utilization"] for s in recent) / len(recent) for p in self.chain}
        current = {p: len(self.state.replicas[p]) for p in self.chain}
        desired = hpa_decide(utils, self.hpa.target, current, self.now, self._hpa_last_change, COOLDOWN,
                             self.state.max_replicas)
        changed = False
        for pod in self.chain:
            if desired[pod] == current[pod]:
                continue
            action = HorizontalScaling(pod, desired[pod])
            try:
                new = actuator.apply(action, self.state, self.net.topology_at(self.now), self._recent_link_utils())
            except actuator.Rejected as exc:
                self.events.emit(self.now, "action_skipped", origin="hpa", action=action_to_dict(action),
                                 reason=exc.reason, detail=exc.detail)
                continue
            self.events.emit(self.now, "action_applied", origin="hpa", action=action_to_dict(action),
                             utilization=round(utils[pod], 6), route_changes=actuator.route_diff(self.state, new))
            if desired[pod] > current[pod]:
                self.hpa_scale_ups += 1
            self._hpa_last_change[pod] = self.now
            self.state = new
            changed = True
        if changed:
            self.events.emit(self.now, "allocation", pods=allocation_of(self.state))
            self._sync_servers()


def run(scenario: ScenarioConfig, decision_maker: Decider | HpaPolicy | str | None = None,
        seed: int | None = None, duration: float | None = None) -> Trace:
    """Simulate ``scenario`` under ``decision_maker``; same inputs give the same Trace."""
    return Simulation(scenario, decision_maker, seed, duration).run()
