"""Backend that forwards launches to another engine instance over its REST
API, making that instance a sub-orchestrator of this one.

Authenticates with a backend service credential, never with the end user's
identity. The child's entry endpoint is passed through verbatim.
"""

from __future__ import annotations

import threading
from typing import Any

import httpx

from conductor.backends.base import (
    Backend,
    Observation,
    Phase,
    ProvisionHandle,
    ProvisionRequest,
    observation,
)
from conductor.errors import BackendUnavailable, LaunchFailed, UnknownHandle

# child entry states -> observation phases
_STATE_PHASE = {
    "Pending": Phase.STARTING,
    "Routing": Phase.STARTING,
    "Provisioning": Phase.STARTING,
    "Starting": Phase.STARTING,
    "Running": Phase.RUNNING,
    "Restarting": Phase.STARTING,
    "Stopped": Phase.EXITED_OK,
    "Failed": Phase.CRASHED,
    "Terminated": Phase.EXITED_OK,
}


class RemoteDelegateBackend(Backend):
    def __init__(
        self,
        backend_id: str,
        endpoint: str,
        credential: str,
        client: httpx.Client | None = None,
        timeout: float = 5.0,
    ):
        self.id = backend_id
        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {credential}"}
        self._by_attempt: dict[tuple[str, int], ProvisionHandle] = {}
        self._lock = threading.RLock()

    def provision(self, request: ProvisionRequest) -> ProvisionHandle:
        payload = request.payload
        key = (payload.entry_id, request.attempt)
        with self._lock:
            if key in self._by_attempt:
                return self._by_attempt[key]
        name, version = payload.service
        body: dict[str, Any] = {"version": version, "inputs": dict(request.inputs)}
        try:
            resp = self._client.post(
                f"{self.endpoint}/start/{name}", json=body, headers=self._headers
            )
        except httpx.HTTPError as exc:
            raise BackendUnavailable(self.id, str(exc)) from exc
        if resp.status_code != 202:
            raise LaunchFailed(f"child engine returned {resp.status_code}: {resp.text}")
        data = resp.json()
        handle = ProvisionHandle(
            backend_id=self.id,
            entry_id=payload.entry_id,
            native_ref=f"{data['event_id']}/{data['entry_id']}",
        )
        with self._lock:
            self._by_attempt[key] = handle
        return handle

    def _split_ref(self, handle: ProvisionHandle) -> tuple[str, str]:
        try:
            child_event, child_entry = handle.native_ref.split("/", 1)
        except ValueError:
            raise UnknownHandle(handle.native_ref) from None
        return child_event, child_entry

    def probe(self, handle: ProvisionHandle) -> Observation:
        child_event, child_entry = self._split_ref(handle)
        try:
            resp = self._client.get(
                f"{self.endpoint}/events/{child_event}", headers=self._headers
            )
        except httpx.HTTPError as exc:
            return observation(Phase.UNKNOWN, f"child unreachable: {exc}")
        if resp.status_code == 404:
            raise UnknownHandle(handle.native_ref)
        if resp.status_code != 200:
            return observation(Phase.UNKNOWN, f"child returned {resp.status_code}")
        for entry in resp.json().get("entries", []):
            if entry.get("entry_id") == child_entry:
                phase = _STATE_PHASE.get(entry.get("state"), Phase.UNKNOWN)
                return observation(phase, f"child state {entry.get('state')}")
        return observation(Phase.UNKNOWN, "child entry missing from status")

    def endpoint_of(self, handle: ProvisionHandle) -> tuple[str, int] | None:
        """The child's entry endpoint, verbatim, once the child reports one."""
        child_event, child_entry = self._split_ref(handle)
        try:
            resp = self._client.get(
                f"{self.endpoint}/events/{child_event}", headers=self._headers
            )
        except httpx.HTTPError:
            return None
        if resp.status_code != 200:
            return None
        for entry in resp.json().get("entries", []):
            if entry.get("entry_id") == child_entry and entry.get("endpoint"):
                host, port = entry["endpoint"]
                return (host, int(port))
        return None

    def teardown(self, handle: ProvisionHandle) -> None:
        child_event, _ = self._split_ref(handle)
        try:
            self._client.delete(
                f"{self.endpoint}/events/{child_event}", headers=self._headers
            )
        except httpx.HTTPError:
            pass  # best effort
