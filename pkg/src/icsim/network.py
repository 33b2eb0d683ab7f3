"""Link-level network state: background traffic, link failures, transfer times."""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ContinuumTopology, link_key

RESIDUAL_FLOOR = 0.1  # Mb/s


class LinkFailure(RuntimeError):
    def __init__(self, link: tuple[str, str], t: float):
        super().__init__(f"link {link[0]}-{link[1]} is down at t={t:g}")
        self.link = link
        self.t = t


@dataclass(frozen=True)
class BackgroundFlow:
    link: tuple[str, str]
    rate: float  # Mb/s
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError("background flow needs start < end")
        if self.rate < 0:
            raise ValueError("background flow rate must be >= 0")
        object.__setattr__(self, "link", link_key(*self.link))

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class LinkToggle:
    link: tuple[str, str]
    time: float
    up: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "link", link_key(*self.link))


def payload_megabits(payload_kb: float) -> float:
    return payload_kb * 8.0 / 1000.0


@dataclass
class NetworkState:
    """Time-indexed view of the links: everything is a pure function of t."""

    topology: ContinuumTopology
    background: list[BackgroundFlow] = field(default_factory=list)
    toggles: list[LinkToggle] = field(default_factory=list)

    def inject(self, event: BackgroundFlow | LinkToggle) -> None:
        if isinstance(event, BackgroundFlow):
            if not self.topology.has_link(*event.link):
                raise KeyError(f"unknown link {event.link}")
            self.background.append(event)
        elif isinstance(event, LinkToggle):
            if not self.topology.has_link(*event.link):
                raise KeyError(f"unknown link {event.link}")
            self.toggles.append(event)
            self.toggles.sort(key=lambda e: e.time)
        else:
            raise TypeError(f"cannot inject {type(event).__name__}")

    def is_up(self, a: str, b: str, t: float) -> bool:
        key = link_key(a, b)
        up = self.topology.link(a, b).up
        for ev in self.toggles:
            if ev.time > t:
                break
            if ev.link == key:
                up = ev.up
        return up

    def background_rate(self, a: str, b: str, t: float) -> float:
        key = link_key(a, b)
        return sum(f.rate for f in self.background if f.link == key and f.active(t))

    def background_megabits(self, a: str, b: str, t0: float, t1: float) -> float:
        """Background volume carried on a link during [t0, t1)."""
        key = link_key(a, b)
        total = 0.0
        for f in self.background:
            if f.link == key:
                overlap = min(t1, f.end) - max(t0, f.start)
                if overlap > 0:
                    total += f.rate * overlap
        return total

    def residual(self, a: str, b: str, t: float) -> float:
        cap = self.topology.link(a, b).capacity
        return max(cap - self.background_rate(a, b, t), RESIDUAL_FLOOR)

    def down_links(self, t: float) -> list[tuple[str, str]]:
        return [l.key for l in self.topology.links if not self.is_up(*l.key, t)]

    def topology_at(self, t: float) -> ContinuumTopology:
        return self.topology.with_link_state(self.down_links(t))

    def transfer_time(self, route: list[str], payload_kb: float, t: float) -> float:
        return transfer_time(route, payload_kb, t, self)


def transfer_time(route: list[str], payload_kb: float, t: float, net: NetworkState) -> float:
    """Store-and-forward time of one payload along ``route`` at time ``t``.

    Sum over hops of payload / residual bandwidth plus the link latency.
    """
    if len(route) < 2:
        return 0.0
    bits = payload_megabits(payload_kb)
    total = 0.0
    for a, b in zip(route, route[1:]):
        if not net.is_up(a, b, t):
            raise LinkFailure(link_key(a, b), t)
        total += bits / net.residual(a, b, t) + net.topology.link(a, b).latency
    return total
