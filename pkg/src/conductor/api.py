"""REST surface over the engine, plus the agent-facing tool manifest.

A thin adapter: no state lives here; every behavioral guarantee reduces to a
lifecycle/registry/authz property. The same routes double as the
inter-orchestrator protocol: a remote-delegate backend drives a child engine
purely through them.
"""

from __future__ import annotations

import uuid
from typing import Any

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from conductor.authz import Identity
from conductor.errors import (
    ConductorError,
    DuplicateBackend,
    DuplicateVersion,
    EventTerminal,
    InvalidCredential,
    InvalidDescriptor,
    InvalidSpec,
    MissingRequiredInput,
    NoActiveVersion,
    QuotaExceeded,
    TypeMismatch,
    Unauthorized,
    UnknownEvent,
    UnknownInput,
    UnknownService,
    UnknownVersion,
)
from conductor.lifecycle import Engine
from conductor.model import FIELD_KINDS, spec_from_dict, spec_to_dict
from conductor.orchestrator import BackendDescriptor
from conductor.registry import ACTIVE, Registry

_STATUS_BY_ERROR: list[tuple[type, int]] = [
    (InvalidCredential, 401),
    (Unauthorized, 403),
    (UnknownService, 404),
    (UnknownVersion, 404),
    (NoActiveVersion, 404),
    (UnknownEvent, 404),
    (QuotaExceeded, 409),
    (DuplicateVersion, 409),
    (DuplicateBackend, 409),
    (EventTerminal, 409),
    (InvalidSpec, 422),
    (MissingRequiredInput, 422),
    (TypeMismatch, 422),
    (UnknownInput, 422),
    (InvalidDescriptor, 422),
]

_JSON_TYPE = {
    "string": {"type": "string"},
    "integer": {"type": "integer"},
    "number": {"type": "number"},
    "boolean": {"type": "boolean"},
    "url": {"type": "string", "format": "uri"},
    "secret": {"type": "string", "format": "password"},
}
assert set(_JSON_TYPE) == set(FIELD_KINDS)


def _fields_to_schema(fields) -> dict[str, Any]:
    properties: dict[str, Any] = {}
    required: list[str] = []
    for f in fields:
        prop = dict(_JSON_TYPE[f.kind])
        if f.description:
            prop["description"] = f.description
        if f.default is not None:
            prop["default"] = f.default
        properties[f.name] = prop
        if f.required:
            required.append(f.name)
    return {"type": "object", "properties": properties, "required": required}


def generate_tool_manifest(registry: Registry) -> list[dict[str, Any]]:
    """One descriptor per active (name, version), derived solely from the
    registry, in stable (name, version) order."""
    manifest = []
    for record in registry.list_records():
        if record.status != ACTIVE:
            continue
        spec = record.spec
        manifest.append({
            "name": spec.name,
            "version": spec.version,
            "description": f"{spec.name} {spec.version}",
            "input_schema": _fields_to_schema(spec.schema.inputs),
            "output_schema": _fields_to_schema(spec.schema.outputs),
            "invoke_hint": f"/start/{spec.name}",
        })
    return manifest


class StartBody(BaseModel):
    version: str | None = None
    inputs: dict[str, Any] = Field(default_factory=dict)
    event_id: str | None = None


class AddServiceBody(BaseModel):
    service: str
    version: str | None = None
    inputs: dict[str, Any] = Field(default_factory=dict)


class ShareBody(BaseModel):
    subject: str
    provider: str = "static"
    display_name: str = ""


class StatusPatch(BaseModel):
    status: str


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="conductor", version="0.1.0")

    @app.exception_handler(ConductorError)
    async def conductor_error(request: Request, exc: ConductorError):
        status = 500
        for etype, code in _STATUS_BY_ERROR:
            if isinstance(exc, etype):
                status = code
                break
        return JSONResponse(
            status_code=status,
            content={
                "code": exc.code,
                "message": str(exc),
                "request_id": uuid.uuid4().hex,
            },
        )

    def caller(request: Request) -> Identity:
        auth = request.headers.get("Authorization", "")
        if not auth.lower().startswith("bearer "):
            raise InvalidCredential()
        return engine.authenticate(auth[7:].strip())

    # --- launch & events -----------------------------------------------------

    @app.post("/start/{service_name}", status_code=202)
    def start(service_name: str, body: StartBody, identity: Identity = Depends(caller)):
        selector = body.version or "latest"
        if body.event_id:
            entry = engine.add_entry(
                body.event_id, service_name, selector, body.inputs, identity
            )
            return {"event_id": body.event_id, "entry_id": entry.id}
        event = engine.create_event(identity, service_name, selector, body.inputs)
        return {"event_id": event.id, "entry_id": event.entries[0]}

    @app.get("/events")
    def list_events(identity: Identity = Depends(caller)):
        return engine.list_events_for(identity)

    @app.get("/events/{event_id}")
    def event_status(event_id: str, identity: Identity = Depends(caller)):
        if not engine.authorize(identity, event_id):
            raise Unauthorized(f"{identity.subject} is not a member of {event_id}")
        return engine.event_view(event_id, with_token=True)

    @app.post("/events/{event_id}/services", status_code=202)
    def add_service(event_id: str, body: AddServiceBody, identity: Identity = Depends(caller)):
        entry = engine.add_entry(
            event_id, body.service, body.version or "latest", body.inputs, identity
        )
        return {"event_id": event_id, "entry_id": entry.id}

    @app.post("/events/{event_id}/share")
    def share(event_id: str, body: ShareBody, identity: Identity = Depends(caller)):
        target = Identity(
            subject=body.subject, provider=body.provider, display_name=body.display_name
        )
        acl = engine.share_event(event_id, target, identity)
        return acl.to_dict()

    @app.delete("/events/{event_id}")
    def terminate(event_id: str, identity: Identity = Depends(caller)):
        engine.terminate_event(event_id, identity)
        return engine.event_view(event_id)

    # --- catalog -------------------------------------------------------------

    @app.get("/manifest")
    def manifest():
        # tool discovery is public; invocation is authenticated
        return generate_tool_manifest(engine.registry)

    @app.get("/services")
    def services():
        return [
            {
                "name": r.spec.name,
                "version": r.spec.version,
                "status": r.status,
                "web_entry": r.spec.web_entry,
                "live_entry_count": r.live_entry_count,
            }
            for r in engine.registry.list_records()
        ]

    @app.post("/services", status_code=201)
    def register_service(request_body: dict, identity: Identity = Depends(caller)):
        spec = spec_from_dict(request_body)
        record = engine.register_service(spec)
        return {"name": record.spec.name, "version": record.spec.version,
                "status": record.status}

    @app.patch("/services/{name}/{version}")
    def patch_service(name: str, version: str, body: StatusPatch,
                      identity: Identity = Depends(caller)):
        if body.status != "deprecated":
            raise InvalidDescriptor(f"unsupported status {body.status!r}")
        engine.deprecate_service(name, version)
        return {"name": name, "version": version, "status": "deprecated"}

    @app.get("/services/{name}/{version}")
    def get_service(name: str, version: str):
        record = engine.registry.record(name, version)
        return spec_to_dict(record.spec)

    # --- backends ------------------------------------------------------------

    @app.get("/backends")
    def backends(identity: Identity = Depends(caller)):
        return engine.fleet.dump()

    @app.post("/backends", status_code=201)
    def register_backend(request_body: dict, identity: Identity = Depends(caller)):
        desc = BackendDescriptor.from_dict(request_body)
        engine.register_backend(desc)
        return desc.to_dict()

    return app
