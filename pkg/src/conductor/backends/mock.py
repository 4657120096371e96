"""Deterministic scripted backend for tests and fault injection."""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass, field

from conductor.backends.base import (
    Backend,
    Observation,
    Phase,
    ProvisionHandle,
    ProvisionRequest,
    observation,
)
from conductor.errors import UnknownHandle


@dataclass
class _Slot:
    handle: ProvisionHandle
    script: list[str]
    cursor: int = 0
    torn_down: bool = False
    latched: str | None = None  # crashed/exited phases never move backward


class MockBackend(Backend):
    """Plays back per-entry scripts of observation phases.

    Each provision of a fresh (entry_id, attempt) pair consumes the next
    script queued for that entry (or the default script); probes step through
    it and the last phase repeats forever. Re-provisioning an already-known
    (entry_id, attempt) pair returns the existing handle without consuming
    anything, giving the exactly-once provisioning effect across restarts.
    """

    def __init__(self, backend_id: str = "mock", default_script: list[str] | None = None):
        self.id = backend_id
        self._default_script = list(default_script or [Phase.STARTING, Phase.RUNNING])
        self._scripts: dict[str, deque[list[str]]] = {}
        self._slots: dict[str, _Slot] = {}
        self._by_attempt: dict[tuple[str, int], str] = {}
        self._provision_counts: dict[str, int] = {}
        self._ref_counter = itertools.count(1)
        self._port_counter = itertools.count(41000)
        self._lock = threading.RLock()

    def script_entry(self, entry_id: str, scripts: list[list[str]]) -> None:
        """Queue phase scripts consumed by successive provision attempts of one entry."""
        with self._lock:
            self._scripts[entry_id] = deque(list(s) for s in scripts)

    def provision_count(self, entry_id: str) -> int:
        with self._lock:
            return self._provision_counts.get(entry_id, 0)

    def live_handle_count(self) -> int:
        with self._lock:
            return sum(1 for s in self._slots.values() if not s.torn_down)

    # --- contract ------------------------------------------------------------

    def provision(self, request: ProvisionRequest) -> ProvisionHandle:
        entry_id = request.payload.entry_id
        with self._lock:
            key = (entry_id, request.attempt)
            if key in self._by_attempt:
                return self._slots[self._by_attempt[key]].handle

            queue = self._scripts.get(entry_id)
            script = list(queue.popleft()) if queue else list(self._default_script)
            ref = f"{self.id}-slot-{next(self._ref_counter)}"
            endpoint = None
            if request.payload.ports:
                endpoint = ("127.0.0.1", next(self._port_counter))
            handle = ProvisionHandle(
                backend_id=self.id,
                entry_id=entry_id,
                native_ref=ref,
                endpoint=endpoint,
                sidecar_refs=tuple(f"{ref}-{s.name}" for s in request.payload.sidecars),
            )
            self._slots[ref] = _Slot(handle=handle, script=script)
            self._by_attempt[key] = ref
            self._provision_counts[entry_id] = self._provision_counts.get(entry_id, 0) + 1
            return handle

    def probe(self, handle: ProvisionHandle) -> Observation:
        with self._lock:
            slot = self._slots.get(handle.native_ref)
            if slot is None:
                raise UnknownHandle(handle.native_ref)
            if slot.torn_down:
                return observation(Phase.UNKNOWN, "handle retired")
            if slot.latched:
                return observation(slot.latched, "scripted")
            phase = slot.script[min(slot.cursor, len(slot.script) - 1)] if slot.script \
                else Phase.RUNNING
            if slot.cursor < len(slot.script):
                slot.cursor += 1
            if phase in Phase.TERMINAL:
                slot.latched = phase
            return observation(phase, "scripted")

    def teardown(self, handle: ProvisionHandle) -> None:
        with self._lock:
            slot = self._slots.get(handle.native_ref)
            if slot is not None:
                slot.torn_down = True
