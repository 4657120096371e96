"""REST surface: status codes, error bodies, and the tool manifest."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from conductor.api import create_app, generate_tool_manifest
from conductor.model import (
    FieldSpec,
    IOSchema,
    ServicePolicy,
    ServiceSpec,
    spec_to_dict,
)
from conductor.registry import Registry
from tests.conftest import plain_spec


@pytest.fixture
def client(engine, mock_backend) -> TestClient:
    engine.register_service(plain_spec())
    return TestClient(create_app(engine))


def auth(credential="alice-key") -> dict[str, str]:
    return {"Authorization": f"Bearer {credential}"}


class TestAuth:
    def test_missing_credential(self, client):
        assert client.post("/start/echo", json={}).status_code == 401

    def test_bad_credential(self, client):
        resp = client.post("/start/echo", json={}, headers=auth("nope"))
        assert resp.status_code == 401
        body = resp.json()
        assert set(body) == {"code", "message", "request_id"}

    def test_manifest_is_public(self, client):
        assert client.get("/manifest").status_code == 200

    def test_services_list_is_public(self, client):
        assert client.get("/services").status_code == 200


class TestStartAndEvents:
    def test_start_returns_202(self, client):
        resp = client.post("/start/echo", json={}, headers=auth())
        assert resp.status_code == 202
        body = resp.json()
        assert body["event_id"] and body["entry_id"]

    def test_unknown_service_404(self, client):
        resp = client.post("/start/ghost", json={}, headers=auth())
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_service"

    def test_event_status_visible_to_owner_only(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        assert client.get(f"/events/{event_id}", headers=auth()).status_code == 200
        assert client.get(f"/events/{event_id}", headers=auth("bob-key")).status_code == 403

    def test_event_status_includes_session_token(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        body = client.get(f"/events/{event_id}", headers=auth()).json()
        assert body["token"]
        assert body["state"] == "Requested"

    def test_unknown_event_404(self, client):
        assert client.get("/events/ev-missing", headers=auth()).status_code == 404

    def test_share_grants_visibility(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        resp = client.post(f"/events/{event_id}/share",
                           json={"subject": "bob"}, headers=auth())
        assert resp.status_code == 200
        assert client.get(f"/events/{event_id}", headers=auth("bob-key")).status_code == 200

    def test_share_requires_membership(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        resp = client.post(f"/events/{event_id}/share",
                           json={"subject": "carol"}, headers=auth("bob-key"))
        assert resp.status_code == 403

    def test_compose_into_event(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        resp = client.post("/start/echo", json={"event_id": event_id}, headers=auth())
        assert resp.status_code == 202
        body = client.get(f"/events/{event_id}", headers=auth()).json()
        assert len(body["entries"]) == 2

    def test_add_service_route(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        resp = client.post(f"/events/{event_id}/services",
                           json={"service": "echo"}, headers=auth())
        assert resp.status_code == 202

    def test_terminate(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        resp = client.delete(f"/events/{event_id}", headers=auth())
        assert resp.status_code == 200
        assert resp.json()["state"] == "Terminated"
        # composing into a terminal event conflicts
        resp = client.post("/start/echo", json={"event_id": event_id}, headers=auth())
        assert resp.status_code == 409

    def test_list_events_scoped_to_caller(self, client):
        client.post("/start/echo", json={}, headers=auth())
        assert len(client.get("/events", headers=auth()).json()) == 1
        assert client.get("/events", headers=auth("bob-key")).json() == []

    def test_get_is_idempotent(self, client):
        event_id = client.post("/start/echo", json={}, headers=auth()).json()["event_id"]
        a = client.get(f"/events/{event_id}", headers=auth()).json()
        b = client.get(f"/events/{event_id}", headers=auth()).json()
        a.pop("token"), b.pop("token")  # session tokens are freshly minted
        assert a == b


class TestCatalogRoutes:
    def test_register_and_fetch_spec(self, client):
        spec = plain_spec(name="worker", version="2.0.0")
        resp = client.post("/services", json=spec_to_dict(spec), headers=auth())
        assert resp.status_code == 201
        fetched = client.get("/services/worker/2.0.0").json()
        assert fetched == spec_to_dict(spec)

    def test_duplicate_version_409(self, client):
        body = spec_to_dict(plain_spec())
        assert client.post("/services", json=body, headers=auth()).status_code == 409

    def test_invalid_spec_422(self, client):
        body = spec_to_dict(plain_spec())
        body["version"] = "not-semver"
        resp = client.post("/services", json=body, headers=auth())
        assert resp.status_code == 422
        assert resp.json()["code"] == "invalid_spec"

    def test_deprecate_via_patch(self, client):
        resp = client.patch("/services/echo/1.0.0", json={"status": "deprecated"},
                            headers=auth())
        assert resp.status_code == 200
        resp = client.post("/start/echo", json={}, headers=auth())
        assert resp.status_code == 404
        assert resp.json()["code"] == "no_active_version"

    def test_invalid_inputs_422(self, client, engine):
        engine.register_service(ServiceSpec(
            name="typed", version="1.0.0",
            schema=IOSchema(inputs=(FieldSpec("n", "integer", required=True),)),
            policy=ServicePolicy(restart_budget=0),
        ))
        resp = client.post("/start/typed", json={"inputs": {}}, headers=auth())
        assert (resp.status_code, resp.json()["code"]) == (422, "missing_required_input")
        resp = client.post("/start/typed", json={"inputs": {"n": "x"}}, headers=auth())
        assert (resp.status_code, resp.json()["code"]) == (422, "type_mismatch")


class TestBackendsRoutes:
    def test_list(self, client):
        body = client.get("/backends", headers=auth()).json()
        assert [b["id"] for b in body] == ["m1"]

    def test_register_duplicate_409(self, client):
        body = {"id": "m1", "kind": "mock"}
        assert client.post("/backends", json=body, headers=auth()).status_code == 409

    def test_register_invalid_422(self, client):
        body = {"id": "x", "kind": "warp-drive"}
        assert client.post("/backends", json=body, headers=auth()).status_code == 422


class TestToolManifest:
    def make_registry(self) -> Registry:
        reg = Registry()
        reg.register_service(ServiceSpec(
            name="notebook", version="1.2.0",
            schema=IOSchema(
                inputs=(
                    FieldSpec("logging_url", "url", required=True),
                    FieldSpec("api_key", "secret", required=True),
                    FieldSpec("level", "string", default="info"),
                ),
                outputs=(FieldSpec("report_path", "string"),),
            ),
        ))
        reg.register_service(ServiceSpec(name="zzz", version="0.1.0"))
        reg.register_service(ServiceSpec(name="old", version="0.0.1"))
        reg.deprecate("old", "0.0.1")
        return reg

    def test_deprecated_excluded_and_sorted(self):
        manifest = generate_tool_manifest(self.make_registry())
        assert [m["name"] for m in manifest] == ["notebook", "zzz"]

    def test_schema_shape(self):
        tool = generate_tool_manifest(self.make_registry())[0]
        schema = tool["input_schema"]
        assert schema["type"] == "object"
        assert schema["required"] == ["logging_url", "api_key"]
        assert schema["properties"]["logging_url"] == {"type": "string", "format": "uri"}
        assert schema["properties"]["api_key"]["format"] == "password"
        assert schema["properties"]["level"]["default"] == "info"
        assert tool["invoke_hint"] == "/start/notebook"
        assert tool["output_schema"]["properties"]["report_path"] == {"type": "string"}

    def test_served_manifest_matches_generator(self, client, engine):
        assert client.get("/manifest").json() == generate_tool_manifest(engine.registry)
