"""Routing brain: backend/sub-orchestrator registry, constraint-based backend
selection with capacity reservation, and relay-bridge planning between
mutually unreachable backends."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from conductor.errors import (
    DuplicateBackend,
    InvalidDescriptor,
    NoCapacity,
    NoMatchingBackend,
    UnbridgeablePair,
)
from conductor.model import ResourceConstraints

LOCAL_PROCESS = "local-process"
MOCK = "mock"
REMOTE_DELEGATE = "remote-delegate"

RESOURCE_DIMS = ("cpu_millicores", "memory_mib", "gpu_count")


@dataclass(frozen=True)
class Allocation:
    cpu_millicores: int = 0
    memory_mib: int = 0
    gpu_count: int = 0

    def plus(self, other: "Allocation") -> "Allocation":
        return Allocation(*(getattr(self, d) + getattr(other, d) for d in RESOURCE_DIMS))

    def minus(self, other: "Allocation") -> "Allocation":
        return Allocation(*(getattr(self, d) - getattr(other, d) for d in RESOURCE_DIMS))

    def fits_within(self, other: "Allocation") -> bool:
        return all(getattr(self, d) <= getattr(other, d) for d in RESOURCE_DIMS)

    @classmethod
    def of(cls, c: ResourceConstraints) -> "Allocation":
        return cls(c.cpu_millicores, c.memory_mib, c.gpu_count)


@dataclass
class BackendDescriptor:
    id: str
    kind: str
    labels: frozenset[str] = frozenset()
    capacity: Allocation = field(default_factory=Allocation)
    allocated: Allocation = field(default_factory=Allocation)
    reachable: frozenset[str] = frozenset()
    endpoint: str | None = None

    def __post_init__(self) -> None:
        self.labels = frozenset(self.labels)
        self.reachable = frozenset(self.reachable) | {self.id}

    def load_fraction(self) -> float:
        fractions = [
            getattr(self.allocated, d) / getattr(self.capacity, d)
            for d in RESOURCE_DIMS
            if getattr(self.capacity, d) > 0
        ]
        return max(fractions) if fractions else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "labels": sorted(self.labels),
            "capacity": {d: getattr(self.capacity, d) for d in RESOURCE_DIMS},
            "allocated": {d: getattr(self.allocated, d) for d in RESOURCE_DIMS},
            "reachable": sorted(self.reachable),
            "endpoint": self.endpoint,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BackendDescriptor":
        return cls(
            id=d["id"],
            kind=d["kind"],
            labels=frozenset(d.get("labels") or ()),
            capacity=Allocation(**(d.get("capacity") or {})),
            allocated=Allocation(**(d.get("allocated") or {})),
            reachable=frozenset(d.get("reachable") or ()),
            endpoint=d.get("endpoint"),
        )


def validate_descriptor(desc: BackendDescriptor) -> None:
    if desc.kind not in (LOCAL_PROCESS, MOCK, REMOTE_DELEGATE):
        raise InvalidDescriptor(f"unknown backend kind {desc.kind!r}")
    if desc.kind == REMOTE_DELEGATE and not desc.endpoint:
        raise InvalidDescriptor("remote-delegate backend requires an endpoint")
    if not desc.allocated.fits_within(desc.capacity):
        raise InvalidDescriptor("allocated exceeds capacity")


def route(constraints: ResourceConstraints, snapshot: Iterable[BackendDescriptor]) -> str:
    """Pick a backend for the given constraints.

    Eligible backends carry every required label and have componentwise free
    capacity for the request. Among eligible, pick the minimal load fraction
    (max over dims with nonzero capacity of allocated/capacity); ties break on
    lexicographically smallest id. Pure: reservation is the caller's job.
    """
    request = Allocation.of(constraints)
    label_matches = [b for b in snapshot if b.labels >= constraints.required_labels]
    if not label_matches:
        raise NoMatchingBackend(constraints.required_labels)
    eligible = [
        b for b in label_matches
        if request.fits_within(b.capacity.minus(b.allocated))
    ]
    if not eligible:
        raise NoCapacity(constraints.required_labels)
    return min(eligible, key=lambda b: (b.load_fraction(), b.id)).id


@dataclass(frozen=True)
class BridgeSpec:
    producer_entry: str
    consumer_entry: str
    relay_backend: str
    forwarded_port: int


def plan_bridges(
    entries: Iterable[tuple[str, str]],
    dependencies: Iterable[tuple[str, str]],
    reachability: Mapping[str, frozenset[str] | set[str]],
    producer_ports: Mapping[str, int] | None = None,
) -> list[BridgeSpec]:
    """One single-hop relay bridge per dependency whose producer backend is not
    directly reachable from the consumer's backend; relay chosen as the
    lexicographically smallest backend the consumer reaches that reaches the
    producer. Multi-hop relays are not attempted."""
    backend_of = dict(entries)
    producer_ports = producer_ports or {}
    bridges: list[BridgeSpec] = []
    for consumer, producer in dependencies:
        cb = backend_of[consumer]
        pb = backend_of[producer]
        reach_c = set(reachability[cb]) | {cb}
        if pb in reach_c:
            continue
        candidates = sorted(
            relay for relay in reach_c
            if pb in (set(reachability.get(relay, ())) | {relay})
        )
        if not candidates:
            raise UnbridgeablePair(consumer, producer)
        bridges.append(
            BridgeSpec(
                producer_entry=producer,
                consumer_entry=consumer,
                relay_backend=candidates[0],
                forwarded_port=producer_ports.get(producer, 0),
            )
        )
    return bridges


class Fleet:
    """Registered backends plus the reservation ledger.

    route_and_reserve serializes concurrent callers so the selection and the
    reservation are one atomic step against the fleet snapshot.
    """

    def __init__(self) -> None:
        self._backends: dict[str, BackendDescriptor] = {}
        self._lock = threading.RLock()

    def register_backend(self, desc: BackendDescriptor) -> None:
        validate_descriptor(desc)
        with self._lock:
            if desc.id in self._backends:
                raise DuplicateBackend(desc.id)
            self._backends[desc.id] = desc

    def get(self, backend_id: str) -> BackendDescriptor:
        with self._lock:
            return self._backends[backend_id]

    def snapshot(self) -> list[BackendDescriptor]:
        with self._lock:
            return [replace(b) for b in sorted(self._backends.values(), key=lambda b: b.id)]

    def route_and_reserve(self, constraints: ResourceConstraints) -> str:
        with self._lock:
            backend_id = route(constraints, self._backends.values())
            self.reserve(backend_id, constraints)
            return backend_id

    def reserve(self, backend_id: str, constraints: ResourceConstraints) -> None:
        with self._lock:
            b = self._backends[backend_id]
            b.allocated = b.allocated.plus(Allocation.of(constraints))
            assert b.allocated.fits_within(b.capacity), "reservation exceeded capacity"

    def release(self, backend_id: str, constraints: ResourceConstraints) -> None:
        with self._lock:
            b = self._backends[backend_id]
            b.allocated = b.allocated.minus(Allocation.of(constraints))

    def dump(self) -> list[dict[str, Any]]:
        with self._lock:
            return [b.to_dict() for b in self.snapshot()]

    @classmethod
    def from_dump(cls, dump: Iterable[Mapping[str, Any]]) -> "Fleet":
        fleet = cls()
        for d in dump:
            fleet._backends[d["id"]] = BackendDescriptor.from_dict(d)
        return fleet


def load_fleet_config(path) -> list[BackendDescriptor]:
    """Backend fleet config: YAML/JSON list of descriptors, loaded at startup."""
    import yaml
    from pathlib import Path

    data = yaml.safe_load(Path(path).read_text()) or []
    return [BackendDescriptor.from_dict(d) for d in data]
