"""Event-specific hostname allocation and the token-gated reverse proxy.

Desk-scale transport is plain HTTP with Host-header routing on one listener;
TLS termination is delegated to the deployment environment. Security rests on
signed event-scoped bearer tokens, carried in the Authorization header or a
``?token=`` query parameter (header wins).
"""

from __future__ import annotations

import http.client
import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Mapping
from urllib.parse import parse_qs, urlsplit


@dataclass
class RouteBinding:
    hostname: str
    event_id: str
    entry_id: str
    target: tuple[str, int] | None = None
    created_at: float = field(default_factory=time.time)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hostname": self.hostname,
            "event_id": self.event_id,
            "entry_id": self.entry_id,
            "target": list(self.target) if self.target else None,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RouteBinding":
        target = d.get("target")
        return cls(
            hostname=d["hostname"],
            event_id=d["event_id"],
            entry_id=d["entry_id"],
            target=(target[0], int(target[1])) if target else None,
            created_at=d.get("created_at", 0.0),
        )


def allocate_hostname(
    service_slug: str, event_id: str, live: Iterable[str], base_domain: str
) -> str:
    """`<slug>[-<n>]-<shortid>.<base_domain>`; `-<n>` (n >= 2) only after a
    collision. Deterministic given (slug, event_id, live)."""
    live_set = set(live)
    shortid = event_id[-6:]
    candidate = f"{service_slug}-{shortid}.{base_domain}"
    n = 2
    while candidate in live_set:
        candidate = f"{service_slug}-{n}-{shortid}.{base_domain}"
        n += 1
    return candidate


class BindingTable:
    """Live hostname -> target bindings; allocation is atomic against the set."""

    def __init__(self, base_domain: str):
        self.base_domain = base_domain
        self._bindings: dict[str, RouteBinding] = {}
        self._lock = threading.RLock()

    def allocate(self, service_slug: str, event_id: str, entry_id: str) -> RouteBinding:
        with self._lock:
            hostname = allocate_hostname(
                service_slug, event_id, self._bindings, self.base_domain
            )
            binding = RouteBinding(hostname=hostname, event_id=event_id, entry_id=entry_id)
            self._bindings[hostname] = binding
            return binding

    def insert(self, binding: RouteBinding) -> None:
        with self._lock:
            self._bindings[binding.hostname] = binding

    def set_target(self, hostname: str, target: tuple[str, int]) -> None:
        with self._lock:
            if hostname in self._bindings:
                self._bindings[hostname].target = target

    def lookup(self, hostname: str) -> RouteBinding | None:
        with self._lock:
            return self._bindings.get(hostname)

    def for_entry(self, entry_id: str) -> RouteBinding | None:
        with self._lock:
            for b in self._bindings.values():
                if b.entry_id == entry_id:
                    return b
            return None

    def release_bindings(self, event_id: str) -> int:
        with self._lock:
            doomed = [h for h, b in self._bindings.items() if b.event_id == event_id]
            for h in doomed:
                del self._bindings[h]
            return len(doomed)

    def live_hostnames(self) -> list[str]:
        with self._lock:
            return sorted(self._bindings)

    def dump(self) -> list[dict[str, Any]]:
        with self._lock:
            return [b.to_dict() for b in self._bindings.values()]

    @classmethod
    def from_dump(cls, base_domain: str, dump: Iterable[Mapping[str, Any]]) -> "BindingTable":
        table = cls(base_domain)
        for d in dump:
            b = RouteBinding.from_dict(d)
            table._bindings[b.hostname] = b
        return table


_HOP_BY_HOP = {
    "connection", "keep-alive", "proxy-authenticate", "proxy-authorization",
    "te", "trailers", "transfer-encoding", "upgrade",
}


def _make_handler(
    lookup: Callable[[str], RouteBinding | None],
    verify: Callable[[str], str | None],
):
    """verify(token) returns the token's event scope, or None when invalid."""

    class ProxyHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _error(self, status: int, code: str) -> None:
            body = json.dumps({"code": code, "message": code.replace("_", " ")}).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _token(self) -> str | None:
            auth = self.headers.get("Authorization", "")
            if auth.lower().startswith("bearer "):
                return auth[7:].strip()
            query = parse_qs(urlsplit(self.path).query)
            values = query.get("token")
            return values[0] if values else None

        def _handle(self) -> None:
            host = (self.headers.get("Host") or "").split(":")[0]
            binding = lookup(host)
            if binding is None:
                self._error(404, "no_route")
                return
            token = self._token()
            if not token:
                self._error(401, "missing_token")
                return
            scope = verify(token)
            if scope is None:
                self._error(401, "invalid_token")
                return
            if scope != binding.event_id:
                self._error(403, "wrong_event_scope")
                return
            if binding.target is None:
                self._error(502, "target_not_ready")
                return
            self._forward(binding.target)

        do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = _handle

        def _forward(self, target: tuple[str, int]) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else None
            conn = http.client.HTTPConnection(target[0], target[1], timeout=10)
            try:
                headers = {
                    k: v for k, v in self.headers.items()
                    if k.lower() not in _HOP_BY_HOP
                }
                conn.request(self.command, self.path, body=body, headers=headers)
                resp = conn.getresponse()
                payload = resp.read()
            except OSError:
                self._error(502, "target_unreachable")
                return
            finally:
                conn.close()
            self.send_response(resp.status)
            for k, v in resp.getheaders():
                if k.lower() in _HOP_BY_HOP or k.lower() == "content-length":
                    continue
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

    return ProxyHandler


class ProxyServer:
    """Single-listener reverse proxy gating every request on an event-scoped
    token verified through the authz layer; holds no identity state itself."""

    def __init__(
        self,
        lookup: Callable[[str], RouteBinding | None],
        verify: Callable[[str], str | None],
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self._server = ThreadingHTTPServer((host, port), _make_handler(lookup, verify))
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=2)
