"""Service catalog: concurrent versions, latest-version resolution, and
per-service concurrency quotas."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Iterator

from conductor.errors import (
    DuplicateVersion,
    InvalidSpec,
    NoActiveVersion,
    UnknownService,
    UnknownVersion,
)
from conductor.model import ServiceSpec, parse_version, spec_from_dict, spec_to_dict, validate_service_spec

ACTIVE = "active"
DEPRECATED = "deprecated"


@dataclass
class ServiceRecord:
    spec: ServiceSpec
    status: str = ACTIVE
    registered_at: float = field(default_factory=time.time)
    live_entry_count: int = 0


@dataclass(frozen=True)
class Admit:
    pass


@dataclass(frozen=True)
class Reject:
    reason: str


class Registry:
    """In-memory catalog; durability is the engine's job (mutations are
    replayed into a fresh Registry on recovery).

    The admission check-and-increment is atomic with respect to concurrent
    callers; record reads return consistent snapshots.
    """

    def __init__(self) -> None:
        self._records: dict[tuple[str, str], ServiceRecord] = {}
        self._lock = threading.RLock()

    # --- catalog -------------------------------------------------------------

    def register_service(self, spec: ServiceSpec, registered_at: float | None = None) -> ServiceRecord:
        report = validate_service_spec(spec)
        if not report.ok:
            raise InvalidSpec(report)
        with self._lock:
            key = (spec.name, spec.version)
            if key in self._records:
                raise DuplicateVersion(spec.name, spec.version)
            record = ServiceRecord(spec=spec, registered_at=registered_at or time.time())
            self._records[key] = record
            return record

    def deprecate(self, name: str, version: str) -> ServiceRecord:
        with self._lock:
            record = self._get(name, version)
            record.status = DEPRECATED
            return record

    def _get(self, name: str, version: str) -> ServiceRecord:
        if not any(k[0] == name for k in self._records):
            raise UnknownService(name)
        try:
            return self._records[(name, version)]
        except KeyError:
            raise UnknownVersion(name, version) from None

    def resolve(self, name: str, selector: str = "latest") -> ServiceSpec:
        with self._lock:
            if selector != "latest":
                return self._get(name, selector).spec
            candidates = [
                r for (n, _), r in self._records.items()
                if n == name and r.status == ACTIVE
            ]
            if not candidates:
                if any(k[0] == name for k in self._records):
                    raise NoActiveVersion(name)
                raise UnknownService(name)
            return max(candidates, key=lambda r: r.spec.version_key).spec

    def record(self, name: str, version: str) -> ServiceRecord:
        with self._lock:
            return self._get(name, version)

    def list_records(self) -> list[ServiceRecord]:
        with self._lock:
            return sorted(
                self._records.values(),
                key=lambda r: (r.spec.name, parse_version(r.spec.version)),
            )

    def __iter__(self) -> Iterator[ServiceRecord]:
        return iter(self.list_records())

    # --- quotas --------------------------------------------------------------

    def admit_launch(self, name: str, version: str) -> Admit | Reject:
        """Check-and-increment in one atomic step."""
        with self._lock:
            record = self._get(name, version)
            limit = record.spec.policy.max_concurrent_entries
            if limit is not None and record.live_entry_count >= limit:
                return Reject("quota")
            record.live_entry_count += 1
            return Admit()

    def can_admit(self, name: str, version: str) -> bool:
        with self._lock:
            record = self._get(name, version)
            limit = record.spec.policy.max_concurrent_entries
            return limit is None or record.live_entry_count < limit

    def note_admitted(self, name: str, version: str) -> None:
        """Count a launch admitted elsewhere (replay path)."""
        with self._lock:
            self._get(name, version).live_entry_count += 1

    def release(self, name: str, version: str) -> None:
        with self._lock:
            record = self._get(name, version)
            if record.live_entry_count > 0:
                record.live_entry_count -= 1

    # --- serialization -------------------------------------------------------

    def dump(self) -> list[dict[str, Any]]:
        with self._lock:
            return [
                {
                    "spec": spec_to_dict(r.spec),
                    "status": r.status,
                    "registered_at": r.registered_at,
                    "live_entry_count": r.live_entry_count,
                }
                for r in self.list_records()
            ]

    @classmethod
    def from_dump(cls, dump: list[dict[str, Any]]) -> "Registry":
        reg = cls()
        for d in dump:
            spec = spec_from_dict(d["spec"])
            rec = ServiceRecord(
                spec=spec,
                status=d.get("status", ACTIVE),
                registered_at=d.get("registered_at", 0.0),
                live_entry_count=int(d.get("live_entry_count", 0)),
            )
            reg._records[(spec.name, spec.version)] = rec
        return reg
