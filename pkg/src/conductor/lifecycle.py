"""Event/entry lifecycle: state machines, derived event state, and the
reconciliation loop driving observed state toward desired state.

The Engine here is the composition root: it owns the store, registry, fleet,
binding table, token service, and backend executors, and serializes all
mutations through one writer so every committed batch is atomic and every
persisted transition is legal.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from conductor import authz as authz_mod
from conductor.authz import (
    ENTRY_INJECTION,
    USER_SESSION,
    EventACL,
    Identity,
    StaticIdentityProvider,
    TokenService,
    identity_from_dict,
    identity_to_dict,
)
from conductor.backends.base import Backend, Phase, ProvisionHandle, ProvisionRequest
from conductor.backends.remote import RemoteDelegateBackend
from conductor.errors import (
    BackendUnavailable,
    DuplicateVersion,
    EventTerminal,
    InvalidCredential,
    InvalidSpec,
    LaunchFailed,
    NoCapacity,
    NoMatchingBackend,
    QuotaExceeded,
    Unauthorized,
    UnknownEvent,
    UnknownHandle,
)
from conductor.ingress import BindingTable, ProxyServer, RouteBinding
from conductor.model import (
    LaunchPayload,
    ServiceSpec,
    render_launch_payload,
    spec_from_dict,
    spec_to_dict,
    validate_service_spec,
)
from conductor.orchestrator import REMOTE_DELEGATE, BackendDescriptor, Fleet, route
from conductor.registry import Registry
from conductor.store import Store


class EntryState:
    PENDING = "Pending"
    ROUTING = "Routing"
    PROVISIONING = "Provisioning"
    STARTING = "Starting"
    RUNNING = "Running"
    RESTARTING = "Restarting"
    STOPPED = "Stopped"
    FAILED = "Failed"
    TERMINATED = "Terminated"

    WITH_ENDPOINT = frozenset({STARTING, RUNNING, RESTARTING})
    ALL = frozenset({
        PENDING, ROUTING, PROVISIONING, STARTING, RUNNING,
        RESTARTING, STOPPED, FAILED, TERMINATED,
    })


class EventState:
    REQUESTED = "Requested"
    ACTIVE = "Active"
    DEGRADED = "Degraded"
    COMPLETED = "Completed"
    FAILED = "Failed"
    TERMINATED = "Terminated"

    TERMINAL = frozenset({COMPLETED, FAILED, TERMINATED})


#: Legal entry transitions. Failed -> Restarting additionally requires
#: restart_count < restart_budget, enforced by the engine.
TRANSITIONS: dict[str, frozenset[str]] = {
    EntryState.PENDING: frozenset({EntryState.ROUTING, EntryState.TERMINATED}),
    EntryState.ROUTING: frozenset({EntryState.PROVISIONING, EntryState.FAILED, EntryState.TERMINATED}),
    EntryState.PROVISIONING: frozenset({EntryState.STARTING, EntryState.FAILED, EntryState.TERMINATED}),
    EntryState.STARTING: frozenset({EntryState.RUNNING, EntryState.FAILED, EntryState.TERMINATED}),
    EntryState.RUNNING: frozenset({EntryState.STOPPED, EntryState.FAILED, EntryState.TERMINATED}),
    EntryState.FAILED: frozenset({EntryState.RESTARTING, EntryState.TERMINATED}),
    EntryState.RESTARTING: frozenset({EntryState.PROVISIONING, EntryState.TERMINATED}),
    EntryState.STOPPED: frozenset({EntryState.TERMINATED}),
    EntryState.TERMINATED: frozenset(),
}


def is_legal_transition(from_state: str, to_state: str) -> bool:
    return to_state in TRANSITIONS.get(from_state, frozenset())


def entry_is_terminal(state: str, exhausted: bool) -> bool:
    """Stopped, Terminated, and budget-exhausted Failed are terminal."""
    if state in (EntryState.STOPPED, EntryState.TERMINATED):
        return True
    return state == EntryState.FAILED and exhausted


def derive_event_state(entry_states: Iterable[tuple[str, bool]]) -> str:
    """Derive event state from the multiset of (entry state, budget-exhausted)
    pairs, applying the priority rules top to bottom."""
    states = list(entry_states)
    if not states:
        return EventState.REQUESTED
    if all(s == EntryState.TERMINATED for s, _ in states):
        return EventState.TERMINATED
    any_failed_exhausted = any(
        s == EntryState.FAILED and ex for s, ex in states
    )
    any_nonterminal = any(not entry_is_terminal(s, ex) for s, ex in states)
    if any_failed_exhausted and any_nonterminal:
        return EventState.DEGRADED
    if not any_nonterminal:
        if any(s == EntryState.FAILED for s, _ in states):
            return EventState.FAILED
        return EventState.COMPLETED
    if any(s == EntryState.RUNNING for s, _ in states) and not any_failed_exhausted:
        return EventState.ACTIVE
    return EventState.REQUESTED


@dataclass
class EntryRecord:
    id: str
    event_id: str
    service: tuple[str, str]
    inputs: dict[str, Any] = field(default_factory=dict)
    backend_id: str | None = None
    state: str = EntryState.PENDING
    endpoint: tuple[str, int] | None = None
    hostname: str | None = None
    restart_count: int = 0
    payload_digest: str = ""
    native_ref: str | None = None
    sidecar_refs: tuple[str, ...] = ()
    running_since: float | None = None
    last_transition_at: float = 0.0
    last_error: str | None = None  # in-memory diagnostics, not persisted

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "event_id": self.event_id,
            "service": list(self.service),
            "inputs": dict(self.inputs),
            "backend_id": self.backend_id,
            "state": self.state,
            "endpoint": list(self.endpoint) if self.endpoint else None,
            "hostname": self.hostname,
            "restart_count": self.restart_count,
            "payload_digest": self.payload_digest,
            "native_ref": self.native_ref,
            "sidecar_refs": list(self.sidecar_refs),
            "running_since": self.running_since,
            "last_transition_at": self.last_transition_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntryRecord":
        ep = d.get("endpoint")
        return cls(
            id=d["id"],
            event_id=d["event_id"],
            service=(d["service"][0], d["service"][1]),
            inputs=dict(d.get("inputs") or {}),
            backend_id=d.get("backend_id"),
            state=d.get("state", EntryState.PENDING),
            endpoint=(ep[0], int(ep[1])) if ep else None,
            hostname=d.get("hostname"),
            restart_count=int(d.get("restart_count", 0)),
            payload_digest=d.get("payload_digest", ""),
            native_ref=d.get("native_ref"),
            sidecar_refs=tuple(d.get("sidecar_refs") or ()),
            running_since=d.get("running_since"),
            last_transition_at=d.get("last_transition_at", 0.0),
        )


@dataclass
class EventRecord:
    id: str
    owner: Identity
    acl: EventACL
    entries: list[str] = field(default_factory=list)
    state: str = EventState.REQUESTED
    created_at: float = 0.0
    event_token: str = ""
    token_revoked: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "owner": identity_to_dict(self.owner),
            "acl": self.acl.to_dict(),
            "entries": list(self.entries),
            "state": self.state,
            "created_at": self.created_at,
            "event_token": self.event_token,
            "token_revoked": self.token_revoked,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EventRecord":
        return cls(
            id=d["id"],
            owner=identity_from_dict(d["owner"]),
            acl=EventACL.from_dict(d["acl"]),
            entries=list(d.get("entries") or ()),
            state=d.get("state", EventState.REQUESTED),
            created_at=d.get("created_at", 0.0),
            event_token=d.get("event_token", ""),
            token_revoked=bool(d.get("token_revoked", False)),
        )


@dataclass
class EngineConfig:
    data_dir: str | Path
    base_domain: str = "conductor.local"
    reconcile_interval: float = 1.0
    snapshot_every: int = 1000
    session_ttl: float = authz_mod.DEFAULT_SESSION_TTL
    event_token_ttl: float = authz_mod.DEFAULT_EVENT_TOKEN_TTL
    delegate_credential: str = "delegate-key"
    fsync: bool = True


class Engine:
    """One orchestration engine instance.

    Constructing an Engine over a data directory with prior state recovers
    that state by replaying the snapshot plus the mutation log.
    """

    def __init__(
        self,
        config: EngineConfig,
        executors: Mapping[str, Backend] | None = None,
        providers: Iterable[StaticIdentityProvider] = (),
        clock: Callable[[], float] = time.time,
    ):
        self.config = config
        self.clock = clock
        self.store = Store(config.data_dir, fsync=config.fsync)
        key = TokenService.load_or_create_key(Path(config.data_dir) / "signing.key")
        self.tokens = TokenService(key, clock=clock)
        self.providers = list(providers)
        self.registry = Registry()
        self.fleet = Fleet()
        self.bindings = BindingTable(config.base_domain)
        self.events: dict[str, EventRecord] = {}
        self.entries: dict[str, EntryRecord] = {}
        self._executors: dict[str, Backend] = dict(executors or {})
        self._lock = threading.RLock()
        self._id_counter = 0
        self._transitions_since_snapshot = 0
        self.proxy: ProxyServer | None = None
        self._recover()

    # --- identity ------------------------------------------------------------

    def authenticate(self, credential: str) -> Identity:
        for provider in self.providers:
            try:
                return provider.authenticate(credential)
            except InvalidCredential:
                continue
        raise InvalidCredential()

    def authorize(self, identity: Identity, event_id: str) -> bool:
        with self._lock:
            event = self.events.get(event_id)
            if event is None:
                raise UnknownEvent(event_id)
            return authz_mod.authorize(event.acl, identity)

    def mint_session_token(self, event_id: str) -> str:
        if event_id not in self.events:
            raise UnknownEvent(event_id)
        return self.tokens.mint(event_id, USER_SESSION, self.config.session_ttl)

    def verify_access(self, token: str) -> str | None:
        """Event id the token grants access to, or None. Used by the proxy."""
        claims = self.tokens.verify(token)
        if claims is None:
            return None
        with self._lock:
            event = self.events.get(claims.scope_event)
            if event is None or event.token_revoked:
                return None
        return claims.scope_event

    # --- ids -----------------------------------------------------------------

    def _new_id(self, prefix: str) -> str:
        with self._lock:
            self._id_counter += 1
            return f"{prefix}{time.time_ns():016x}{self._id_counter:06d}"

    # --- catalog / fleet -----------------------------------------------------

    def register_service(self, spec: ServiceSpec):
        with self._lock:
            report = validate_service_spec(spec)
            if not report.ok:
                raise InvalidSpec(report)
            if any(
                r.spec.name == spec.name and r.spec.version == spec.version
                for r in self.registry.list_records()
            ):
                raise DuplicateVersion(spec.name, spec.version)
            self._commit([
                {"kind": "service.register",
                 "data": {"spec": spec_to_dict(spec), "registered_at": self.clock()}},
            ])
            return self.registry.record(spec.name, spec.version)

    def deprecate_service(self, name: str, version: str) -> None:
        with self._lock:
            self.registry.record(name, version)  # raises if unknown
            self._commit([
                {"kind": "service.deprecate", "data": {"name": name, "version": version}},
            ])

    def register_backend(self, desc: BackendDescriptor, executor: Backend | None = None) -> None:
        with self._lock:
            if executor is None and desc.kind == REMOTE_DELEGATE:
                executor = RemoteDelegateBackend(
                    desc.id, desc.endpoint or "", self.config.delegate_credential
                )
            if executor is not None:
                self._executors[desc.id] = executor
            self._commit([
                {"kind": "backend.register", "data": {"descriptor": desc.to_dict()}},
            ])

    def executor(self, backend_id: str) -> Backend:
        backend = self._executors.get(backend_id)
        if backend is None:
            raise BackendUnavailable(backend_id, "no executor attached")
        return backend

    # --- event operations ----------------------------------------------------

    def create_event(
        self,
        owner: Identity,
        service_name: str,
        selector: str = "latest",
        inputs: Mapping[str, Any] | None = None,
    ) -> EventRecord:
        inputs = dict(inputs or {})
        with self._lock:
            spec = self.registry.resolve(service_name, selector)
            if not self.registry.can_admit(spec.name, spec.version):
                raise QuotaExceeded(spec.name, spec.version)
            event_id = self._new_id("ev")
            entry_id = self._new_id("en")
            token = self.tokens.mint(event_id, ENTRY_INJECTION, self.config.event_token_ttl)
            payload = render_launch_payload(spec, inputs, token, entry_id)
            now = self.clock()
            event = EventRecord(
                id=event_id,
                owner=owner,
                acl=EventACL(owner=owner),
                entries=[entry_id],
                state=EventState.REQUESTED,
                created_at=now,
                event_token=token,
            )
            entry = EntryRecord(
                id=entry_id,
                event_id=event_id,
                service=(spec.name, spec.version),
                inputs=inputs,
                payload_digest=payload.digest(),
                last_transition_at=now,
            )
            self._commit(
                [{"kind": "event.create",
                  "data": {"event": event.to_dict(), "entry": entry.to_dict()}}],
                event_id=event_id,
            )
            return self.events[event_id]

    def add_entry(
        self,
        event_id: str,
        service_name: str,
        selector: str,
        inputs: Mapping[str, Any] | None,
        caller: Identity,
    ) -> EntryRecord:
        inputs = dict(inputs or {})
        with self._lock:
            event = self.events.get(event_id)
            if event is None:
                raise UnknownEvent(event_id)
            if not authz_mod.authorize(event.acl, caller):
                raise Unauthorized(f"{caller.subject} is not a member of {event_id}")
            if event.state in EventState.TERMINAL:
                raise EventTerminal(event_id)
            spec = self.registry.resolve(service_name, selector)
            if not self.registry.can_admit(spec.name, spec.version):
                raise QuotaExceeded(spec.name, spec.version)
            entry_id = self._new_id("en")
            payload = render_launch_payload(spec, inputs, event.event_token, entry_id)
            entry = EntryRecord(
                id=entry_id,
                event_id=event_id,
                service=(spec.name, spec.version),
                inputs=inputs,
                payload_digest=payload.digest(),
                last_transition_at=self.clock(),
            )
            self._commit(
                [{"kind": "event.entry_add", "data": {"entry": entry.to_dict()}}],
                event_id=event_id,
            )
            return self.entries[entry_id]

    def share_event(self, event_id: str, target: Identity, caller: Identity) -> EventACL:
        with self._lock:
            event = self.events.get(event_id)
            if event is None:
                raise UnknownEvent(event_id)
            if not authz_mod.authorize(event.acl, caller):
                raise Unauthorized(f"{caller.subject} is not a member of {event_id}")
            self._commit(
                [{"kind": "event.share",
                  "data": {"event_id": event_id, "identity": identity_to_dict(target)}}],
                event_id=event_id,
            )
            return event.acl

    def terminate_event(self, event_id: str, caller: Identity) -> EventRecord:
        with self._lock:
            event = self.events.get(event_id)
            if event is None:
                raise UnknownEvent(event_id)
            if not authz_mod.authorize(event.acl, caller):
                raise Unauthorized(f"{caller.subject} is not a member of {event_id}")
            muts: list[dict[str, Any]] = []
            doomed: list[tuple[EntryRecord, ProvisionHandle]] = []
            for entry_id in event.entries:
                entry = self.entries[entry_id]
                if entry_is_terminal(entry.state, self._exhausted(entry)):
                    continue
                doomed.append((entry, self._handle_for(entry)))
                muts.append(self._transition_mut(entry, EntryState.TERMINATED, "terminate"))
            if muts or not event.token_revoked:
                muts.append({"kind": "binding.release", "data": {"event_id": event_id}})
                muts.append({"kind": "event.revoke_token", "data": {"event_id": event_id}})
                self._commit(muts, event_id=event_id)
            # teardown after commit so an interrupted terminate replays as done
            for entry, handle in doomed:
                self._teardown_backend(entry, handle)
            return event

    # --- reconciliation ------------------------------------------------------

    def reconcile(self, now: float | None = None) -> list[dict[str, Any]]:
        """One sweep of the control loop; idempotent under unchanged
        observations. Per-entry failures are recorded on the entry and never
        abort the sweep."""
        now = self.clock() if now is None else now
        actions: list[dict[str, Any]] = []
        with self._lock:
            entry_ids = sorted(self.entries)
        for entry_id in entry_ids:
            with self._lock:
                entry = self.entries.get(entry_id)
                if entry is None or entry_is_terminal(entry.state, self._exhausted(entry)):
                    continue
                try:
                    actions.extend(self._reconcile_entry(entry, now))
                except (LaunchFailed, BackendUnavailable, UnknownHandle) as exc:
                    entry.last_error = str(exc)
                except Exception as exc:  # never abort the sweep
                    entry.last_error = f"{type(exc).__name__}: {exc}"
        return actions

    def reconcile_to_fixed_point(self, max_sweeps: int = 50, now: float | None = None) -> int:
        """Sweep until a sweep issues no actions; returns sweeps used."""
        for i in range(1, max_sweeps + 1):
            if not self.reconcile(now):
                return i
        return max_sweeps

    def _reconcile_entry(self, entry: EntryRecord, now: float) -> list[dict[str, Any]]:
        spec = self._spec_for(entry)
        if entry.state == EntryState.PENDING:
            return self._do_route_and_provision(entry, spec, now)
        if entry.state == EntryState.ROUTING:
            return self._do_provision(entry, spec, now, [])
        if entry.state in (EntryState.PROVISIONING, EntryState.STARTING, EntryState.RUNNING):
            return self._do_probe(entry, spec, now)
        if entry.state in (EntryState.FAILED, EntryState.RESTARTING):
            return self._do_restart(entry, spec, now)
        return []

    def _do_route_and_provision(self, entry: EntryRecord, spec: ServiceSpec, now: float):
        try:
            backend_id = route(spec.constraints, self.fleet.snapshot())
        except (NoMatchingBackend, NoCapacity) as exc:
            entry.last_error = str(exc)
            return []
        muts = [self._transition_mut(
            entry, EntryState.ROUTING, "routed", override={"backend_id": backend_id},
        )]
        hostname = None
        if spec.web_entry:
            hostname = self.bindings.allocate(spec.name, entry.event_id, entry.id).hostname
            # allocation registered in the live table; persist it with the batch
            muts[0]["data"]["set"]["hostname"] = hostname
            muts.append({
                "kind": "binding.add",
                "data": {"binding": RouteBinding(
                    hostname=hostname, event_id=entry.event_id, entry_id=entry.id,
                    created_at=now,
                ).to_dict()},
            })
        actions = self._do_provision(entry, spec, now, muts,
                                     backend_id=backend_id, hostname=hostname)
        return [{"action": "route", "entry_id": entry.id, "backend_id": backend_id}] + actions

    def _do_provision(
        self,
        entry: EntryRecord,
        spec: ServiceSpec,
        now: float,
        pending_muts: list[dict[str, Any]],
        backend_id: str | None = None,
        hostname: str | None = None,
    ):
        backend_id = backend_id or entry.backend_id
        assert backend_id is not None
        event = self.events[entry.event_id]
        payload = render_launch_payload(spec, entry.inputs, event.event_token, entry.id)
        request = ProvisionRequest(payload=payload, attempt=entry.restart_count,
                                   inputs=entry.inputs)
        try:
            handle = self.executor(backend_id).provision(request)
        except (LaunchFailed, BackendUnavailable) as exc:
            entry.last_error = str(exc)
            pending_muts.append(self._transition_mut(
                entry, EntryState.FAILED, f"provision failed: {exc}",
                from_state=EntryState.ROUTING,
                override={"backend_id": backend_id, "hostname": hostname or entry.hostname},
            ))
            self._commit(pending_muts, event_id=entry.event_id)
            return [{"action": "provision-failed", "entry_id": entry.id}]
        pending_muts.append(self._transition_mut(
            entry, EntryState.PROVISIONING, "provisioned",
            from_state=EntryState.ROUTING,
            override={
                "backend_id": backend_id,
                "hostname": hostname or entry.hostname,
                "native_ref": handle.native_ref,
                "sidecar_refs": list(handle.sidecar_refs),
            },
        ))
        if handle.endpoint and (hostname or entry.hostname):
            pending_muts.append({
                "kind": "binding.target",
                "data": {"hostname": hostname or entry.hostname,
                         "target": list(handle.endpoint)},
            })
        self._commit(pending_muts, event_id=entry.event_id)
        return [{"action": "provision", "entry_id": entry.id, "backend_id": backend_id}]

    def _handle_for(self, entry: EntryRecord) -> ProvisionHandle:
        return ProvisionHandle(
            backend_id=entry.backend_id or "",
            entry_id=entry.id,
            native_ref=entry.native_ref or "",
            endpoint=entry.endpoint,
            sidecar_refs=entry.sidecar_refs,
        )

    def _do_probe(self, entry: EntryRecord, spec: ServiceSpec, now: float):
        backend = self.executor(entry.backend_id or "")
        handle = self._handle_for(entry)
        try:
            obs = backend.probe(handle)
        except UnknownHandle:
            entry.last_error = "backend does not recognize handle"
            return []

        if obs.phase == Phase.UNKNOWN:
            return []

        if obs.phase == Phase.STARTING:
            if entry.state != EntryState.PROVISIONING:
                return []
            endpoint = backend.endpoint_of(handle)
            muts = [self._transition_mut(
                entry, EntryState.STARTING, "observed starting",
                override={"endpoint": list(endpoint) if endpoint else None},
            )]
            muts.extend(self._binding_target_mut(entry, endpoint))
            self._commit(muts, event_id=entry.event_id)
            return [{"action": "observe", "entry_id": entry.id, "phase": "starting"}]

        if obs.phase == Phase.RUNNING:
            if entry.state == EntryState.RUNNING:
                return self._check_ttl(entry, spec, now)
            endpoint = backend.endpoint_of(handle) or entry.endpoint
            muts = []
            state = entry.state
            if state == EntryState.PROVISIONING:
                muts.append(self._transition_mut(
                    entry, EntryState.STARTING, "observed running",
                    override={"endpoint": list(endpoint) if endpoint else None},
                ))
                state = EntryState.STARTING
            muts.append(self._transition_mut(
                entry, EntryState.RUNNING, "observed running",
                from_state=state,
                override={"endpoint": list(endpoint) if endpoint else None,
                          "running_since": now},
            ))
            muts.extend(self._binding_target_mut(entry, endpoint))
            self._commit(muts, event_id=entry.event_id)
            return [{"action": "observe", "entry_id": entry.id, "phase": "running"}]

        if obs.phase == Phase.CRASHED:
            return self._handle_crash(entry, spec, now, obs.detail)

        if obs.phase == Phase.EXITED_OK:
            muts = []
            state = entry.state
            # walk the legal chain down to Stopped
            chain = {EntryState.PROVISIONING: [EntryState.STARTING, EntryState.RUNNING],
                     EntryState.STARTING: [EntryState.RUNNING],
                     EntryState.RUNNING: []}[state]
            for step in chain:
                muts.append(self._transition_mut(entry, step, "exited", from_state=state))
                state = step
            muts.append(self._transition_mut(
                entry, EntryState.STOPPED, "exited cleanly", from_state=state,
            ))
            self._commit(muts, event_id=entry.event_id)
            return [{"action": "stop", "entry_id": entry.id}]

        return []

    def _check_ttl(self, entry: EntryRecord, spec: ServiceSpec, now: float):
        ttl = spec.policy.ttl_seconds
        if ttl is None or entry.running_since is None:
            return []
        if now - entry.running_since <= ttl:
            return []
        # commit before teardown so a crash in between replays into Stopped
        # instead of leaving a retired handle behind a live-looking entry
        self._commit(
            [self._transition_mut(entry, EntryState.STOPPED, "ttl expired")],
            event_id=entry.event_id,
        )
        self._teardown_entry(entry)
        return [{"action": "teardown", "entry_id": entry.id, "reason": "ttl"}]

    def _handle_crash(self, entry: EntryRecord, spec: ServiceSpec, now: float, detail: str):
        budget = spec.policy.restart_budget
        old_handle = self._handle_for(entry)
        if entry.restart_count >= budget:
            self._commit(
                [self._transition_mut(
                    entry, EntryState.FAILED, f"crashed, budget exhausted: {detail}",
                )],
                event_id=entry.event_id,
            )
            self._teardown_backend(entry, old_handle)
            return [{"action": "fail", "entry_id": entry.id}]
        muts = [
            self._transition_mut(entry, EntryState.FAILED, f"crashed: {detail}"),
        ]
        actions = self._restart_from_failed(entry, spec, now, muts, EntryState.FAILED)
        self._teardown_backend(entry, old_handle)
        return actions

    def _do_restart(self, entry: EntryRecord, spec: ServiceSpec, now: float):
        # Failed or Restarting persisted across a crash/restart of the engine.
        if entry.state == EntryState.FAILED and entry.restart_count >= spec.policy.restart_budget:
            return []
        muts: list[dict[str, Any]] = []
        return self._restart_from_failed(entry, spec, now, muts, entry.state)

    def _restart_from_failed(
        self,
        entry: EntryRecord,
        spec: ServiceSpec,
        now: float,
        muts: list[dict[str, Any]],
        state: str,
    ):
        new_count = entry.restart_count + 1
        event = self.events[entry.event_id]
        payload = render_launch_payload(spec, entry.inputs, event.event_token, entry.id)
        request = ProvisionRequest(payload=payload, attempt=new_count, inputs=entry.inputs)
        if state == EntryState.FAILED:
            muts.append(self._transition_mut(
                entry, EntryState.RESTARTING, "restarting", from_state=EntryState.FAILED,
            ))
            state = EntryState.RESTARTING
        try:
            handle = self.executor(entry.backend_id or "").provision(request)
        except (LaunchFailed, BackendUnavailable) as exc:
            entry.last_error = str(exc)
            # commit only the Failed leg (if any); retry next sweep
            failed_legs = [m for m in muts if m["data"]["to"] == EntryState.FAILED]
            if failed_legs:
                self._commit(failed_legs, event_id=entry.event_id)
            return [{"action": "restart-failed", "entry_id": entry.id}]
        muts.append(self._transition_mut(
            entry, EntryState.PROVISIONING, "re-provisioned", from_state=state,
            override={
                "restart_count": new_count,
                "native_ref": handle.native_ref,
                "sidecar_refs": list(handle.sidecar_refs),
                "endpoint": None,
                "running_since": None,
            },
        ))
        self._commit(muts, event_id=entry.event_id)
        return [{"action": "restart", "entry_id": entry.id, "restart_count": new_count}]

    def _binding_target_mut(self, entry: EntryRecord, endpoint) -> list[dict[str, Any]]:
        if entry.hostname and endpoint:
            return [{
                "kind": "binding.target",
                "data": {"hostname": entry.hostname, "target": list(endpoint)},
            }]
        return []

    def _teardown_entry(self, entry: EntryRecord) -> None:
        self._teardown_backend(entry, self._handle_for(entry))

    def _teardown_backend(self, entry: EntryRecord, handle: ProvisionHandle) -> None:
        if entry.backend_id and handle.native_ref:
            try:
                self.executor(entry.backend_id).teardown(handle)
            except Exception as exc:  # best effort by contract
                entry.last_error = f"teardown: {exc}"

    # --- helpers -------------------------------------------------------------

    def _spec_for(self, entry: EntryRecord) -> ServiceSpec:
        return self.registry.record(entry.service[0], entry.service[1]).spec

    def _exhausted(self, entry: EntryRecord) -> bool:
        spec = self._spec_for(entry)
        return entry.restart_count >= spec.policy.restart_budget

    def _transition_mut(
        self,
        entry: EntryRecord,
        to_state: str,
        reason: str,
        from_state: str | None = None,
        override: Mapping[str, Any] | None = None,
    ) -> dict[str, Any]:
        return {
            "kind": "entry.transition",
            "data": {
                "event_id": entry.event_id,
                "entry_id": entry.id,
                "from": from_state or entry.state,
                "to": to_state,
                "reason": reason,
                "at": self.clock(),
                "set": dict(override or {}),
            },
        }

    # --- commit / apply / recover -------------------------------------------

    def _commit(self, muts: list[dict[str, Any]], event_id: str | None = None) -> None:
        self.store.commit(muts, event_id=event_id)
        for mut in muts:
            self._apply(mut)
        self._transitions_since_snapshot += sum(
            1 for m in muts if m["kind"] == "entry.transition"
        )
        if self._transitions_since_snapshot >= self.config.snapshot_every:
            self.store.write_snapshot(self._state_dump())
            self._transitions_since_snapshot = 0

    def _apply(self, mut: Mapping[str, Any]) -> None:
        kind = mut["kind"]
        data = mut["data"]
        if kind == "service.register":
            self.registry.register_service(
                spec_from_dict(data["spec"]), registered_at=data.get("registered_at")
            )
        elif kind == "service.deprecate":
            self.registry.deprecate(data["name"], data["version"])
        elif kind == "backend.register":
            desc = BackendDescriptor.from_dict(data["descriptor"])
            self.fleet.register_backend(desc)
            if desc.id not in self._executors and desc.kind == REMOTE_DELEGATE:
                self._executors[desc.id] = RemoteDelegateBackend(
                    desc.id, desc.endpoint or "", self.config.delegate_credential
                )
        elif kind == "event.create":
            event = EventRecord.from_dict(data["event"])
            entry = EntryRecord.from_dict(data["entry"])
            self.events[event.id] = event
            self.entries[entry.id] = entry
            self.registry.note_admitted(*entry.service)
            event.state = self._derive(event)
        elif kind == "event.entry_add":
            entry = EntryRecord.from_dict(data["entry"])
            self.entries[entry.id] = entry
            event = self.events[entry.event_id]
            if entry.id not in event.entries:
                event.entries.append(entry.id)
            self.registry.note_admitted(*entry.service)
            event.state = self._derive(event)
        elif kind == "entry.transition":
            self._apply_transition(data)
        elif kind == "binding.add":
            self.bindings.insert(RouteBinding.from_dict(data["binding"]))
        elif kind == "binding.target":
            self.bindings.set_target(data["hostname"], tuple(data["target"]))
        elif kind == "binding.release":
            self.bindings.release_bindings(data["event_id"])
        elif kind == "event.share":
            self.events[data["event_id"]].acl.add(identity_from_dict(data["identity"]))
        elif kind == "event.revoke_token":
            self.events[data["event_id"]].token_revoked = True
        else:
            raise ValueError(f"unknown mutation kind {kind!r}")

    def _apply_transition(self, data: Mapping[str, Any]) -> None:
        entry = self.entries[data["entry_id"]]
        was_terminal = entry_is_terminal(entry.state, self._exhausted(entry))
        prev_backend = entry.backend_id
        to_state = data["to"]
        updates = data.get("set") or {}

        for key in ("backend_id", "hostname", "native_ref", "restart_count",
                    "running_since", "payload_digest"):
            if key in updates:
                setattr(entry, key, updates[key])
        if "sidecar_refs" in updates:
            entry.sidecar_refs = tuple(updates["sidecar_refs"] or ())
        if "endpoint" in updates:
            ep = updates["endpoint"]
            entry.endpoint = (ep[0], int(ep[1])) if ep else None

        entry.state = to_state
        entry.last_transition_at = data.get("at", self.clock())
        if to_state not in EntryState.WITH_ENDPOINT:
            entry.endpoint = None

        # reservation ledger bookkeeping
        if to_state == EntryState.ROUTING and entry.backend_id and prev_backend is None:
            spec = self._spec_for(entry)
            self.fleet.reserve(entry.backend_id, spec.constraints)
        now_terminal = entry_is_terminal(entry.state, self._exhausted(entry))
        if now_terminal and not was_terminal:
            self.registry.release(*entry.service)
            if entry.backend_id:
                spec = self._spec_for(entry)
                self.fleet.release(entry.backend_id, spec.constraints)

        event = self.events[entry.event_id]
        event.state = self._derive(event)

    def _derive(self, event: EventRecord) -> str:
        pairs = [
            (self.entries[eid].state, self._exhausted(self.entries[eid]))
            for eid in event.entries
        ]
        return derive_event_state(pairs)

    def _state_dump(self) -> dict[str, Any]:
        return {
            "services": self.registry.dump(),
            "backends": self.fleet.dump(),
            "bindings": self.bindings.dump(),
            "events": [e.to_dict() for e in self.events.values()],
            "entries": [e.to_dict() for e in self.entries.values()],
            "id_counter": self._id_counter,
        }

    def _load_state(self, state: Mapping[str, Any]) -> None:
        self.registry = Registry.from_dump(state.get("services") or [])
        self.fleet = Fleet.from_dump(state.get("backends") or [])
        self.bindings = BindingTable.from_dump(
            self.config.base_domain, state.get("bindings") or []
        )
        self.events = {
            d["id"]: EventRecord.from_dict(d) for d in state.get("events") or []
        }
        self.entries = {
            d["id"]: EntryRecord.from_dict(d) for d in state.get("entries") or []
        }
        self._id_counter = int(state.get("id_counter", 0))
        # remote-delegate executors can be rebuilt from descriptors
        for desc in self.fleet.snapshot():
            if desc.id not in self._executors and desc.kind == REMOTE_DELEGATE:
                self._executors[desc.id] = RemoteDelegateBackend(
                    desc.id, desc.endpoint or "", self.config.delegate_credential
                )

    def _recover(self) -> None:
        snap = self.store.read_snapshot()
        after_seq = 0
        if snap is not None:
            self._load_state(snap["state"])
            after_seq = snap["seq"]
        replayed = False
        for _, _, muts in self.store.read_batches(after_seq=after_seq):
            replayed = True
            for mut in muts:
                self._apply(mut)
        if replayed or snap is not None:
            self.store.rebuild_transition_projection()
            self._id_counter = max(
                self._id_counter, len(self.entries) + len(self.events)
            )

    # --- views ---------------------------------------------------------------

    def event_view(self, event_id: str, with_token: bool = False) -> dict[str, Any]:
        with self._lock:
            event = self.events.get(event_id)
            if event is None:
                raise UnknownEvent(event_id)
            entries = []
            for eid in event.entries:
                entry = self.entries[eid]
                binding = self.bindings.for_entry(eid)
                entries.append({
                    "entry_id": entry.id,
                    "service": list(entry.service),
                    "state": entry.state,
                    "restart_count": entry.restart_count,
                    "url": f"http://{binding.hostname}/" if binding else None,
                    "endpoint": list(entry.endpoint) if entry.endpoint else None,
                })
            view: dict[str, Any] = {
                "event_id": event.id,
                "state": event.state,
                "created_at": event.created_at,
                "owner": identity_to_dict(event.owner),
                "entries": entries,
            }
            if with_token and not event.token_revoked:
                view["token"] = self.mint_session_token(event_id)
            return view

    def list_events_for(self, identity: Identity) -> list[dict[str, Any]]:
        with self._lock:
            ids = [
                e.id for e in self.events.values()
                if authz_mod.authorize(e.acl, identity)
            ]
        return [self.event_view(i) for i in sorted(ids)]

    # --- proxy ---------------------------------------------------------------

    def start_proxy(self, host: str = "127.0.0.1", port: int = 0) -> ProxyServer:
        self.proxy = ProxyServer(
            lookup=self.bindings.lookup, verify=self.verify_access, host=host, port=port
        )
        self.proxy.start()
        return self.proxy

    def stop_proxy(self) -> None:
        if self.proxy is not None:
            self.proxy.stop()
            self.proxy = None
