"""Executor contract shared by all backend implementations."""

from __future__ import annotations

import abc
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

from conductor.model import LaunchPayload


class Phase:
    STARTING = "starting"
    RUNNING = "running"
    EXITED_OK = "exited_ok"
    CRASHED = "crashed"
    UNKNOWN = "unknown"

    TERMINAL = frozenset({EXITED_OK, CRASHED})
    ALL = frozenset({STARTING, RUNNING, EXITED_OK, CRASHED, UNKNOWN})


@dataclass(frozen=True)
class ProvisionRequest:
    """Everything a backend needs to launch one entry attempt.

    `attempt` equals the entry's restart count and doubles as the idempotency
    key: re-provisioning the same (entry_id, attempt) must return the handle
    from the first call without starting anything new.
    `inputs` carries the caller's raw launch inputs so a remote-delegate
    backend can forward the request over the engine's own REST API.
    """

    payload: LaunchPayload
    attempt: int = 0
    inputs: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ProvisionHandle:
    backend_id: str
    entry_id: str
    native_ref: str
    endpoint: tuple[str, int] | None = None
    sidecar_refs: tuple[str, ...] = ()


def observation(phase: str, detail: str = "") -> "Observation":
    return Observation(phase=phase, detail=detail, observed_at=time.time())


@dataclass(frozen=True)
class Observation:
    phase: str
    detail: str = ""
    observed_at: float = 0.0


class Backend(abc.ABC):
    """provision/probe/teardown contract.

    Implementations must be safe for concurrent calls across distinct handles;
    calls on the same handle are serialized by the caller.
    """

    id: str

    @abc.abstractmethod
    def provision(self, request: ProvisionRequest) -> ProvisionHandle:
        ...

    @abc.abstractmethod
    def probe(self, handle: ProvisionHandle) -> Observation:
        ...

    @abc.abstractmethod
    def teardown(self, handle: ProvisionHandle) -> None:
        ...

    def endpoint_of(self, handle: ProvisionHandle) -> tuple[str, int] | None:
        """Current endpoint for the entry; backends whose endpoints appear
        after provisioning (remote delegates) override this."""
        return handle.endpoint
