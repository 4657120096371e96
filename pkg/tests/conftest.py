"""Shared fixtures: engines over temp dirs, identity providers, live servers."""

from __future__ import annotations

import threading
import time

import pytest
import uvicorn

from conductor.authz import StaticIdentityProvider
from conductor.backends import LocalProcessBackend, MockBackend
from conductor.lifecycle import Engine, EngineConfig
from conductor.model import (
    FieldSpec,
    IOSchema,
    ResourceConstraints,
    ServicePolicy,
    ServiceSpec,
)
from conductor.orchestrator import LOCAL_PROCESS, MOCK, Allocation, BackendDescriptor

CREDENTIALS = {
    "alice-key": ("alice", "Alice"),
    "bob-key": ("bob", "Bob"),
    "carol-key": ("carol", "Carol"),
    "delegate-key": ("delegate-bot", "Delegate Bot"),
}


@pytest.fixture
def provider() -> StaticIdentityProvider:
    return StaticIdentityProvider("static", CREDENTIALS)


@pytest.fixture
def make_engine(tmp_path, provider):
    """Factory for engines over fresh (or reused) data dirs in tmp_path."""
    engines: list[Engine] = []

    def build(name: str = "data", executors=None, clock=time.time, **config_kw) -> Engine:
        cfg = EngineConfig(data_dir=tmp_path / name, fsync=False,
                           base_domain="conductor.test", **config_kw)
        engine = Engine(cfg, executors=executors, providers=[provider], clock=clock)
        engines.append(engine)
        return engine

    yield build
    for engine in engines:
        engine.stop_proxy()


@pytest.fixture
def engine(make_engine) -> Engine:
    return make_engine()


@pytest.fixture
def mock_backend(engine) -> MockBackend:
    backend = MockBackend("m1")
    engine.register_backend(
        BackendDescriptor(id="m1", kind=MOCK, labels=frozenset({"cpu"}),
                          capacity=Allocation(cpu_millicores=100000, memory_mib=100000)),
        backend,
    )
    return backend


@pytest.fixture
def local_backend(engine, tmp_path) -> LocalProcessBackend:
    backend = LocalProcessBackend("local", tmp_path / "local")
    engine.register_backend(
        BackendDescriptor(id="local", kind=LOCAL_PROCESS,
                          labels=frozenset({"cpu", "web-ingress"}),
                          capacity=Allocation(cpu_millicores=100000, memory_mib=100000)),
        backend,
    )
    return backend


@pytest.fixture
def alice(engine):
    return engine.authenticate("alice-key")


@pytest.fixture
def bob(engine):
    return engine.authenticate("bob-key")


def plain_spec(name="echo", version="1.0.0", **kw) -> ServiceSpec:
    kw.setdefault("policy", ServicePolicy(restart_budget=0))
    return ServiceSpec(name=name, version=version, **kw)


def echo_http_spec(name="echo", version="1.0.0", restart_budget=0, ttl=None) -> ServiceSpec:
    return ServiceSpec(
        name=name,
        version=version,
        command=("python", "-m", "conductor.demo.echo"),
        ports=(8000,),
        web_entry=True,
        constraints=ResourceConstraints(required_labels=frozenset({"web-ingress"})),
        policy=ServicePolicy(restart_budget=restart_budget, ttl_seconds=ttl),
    )


def sleeper_spec(name="worker", version="1.0.0", env_template=None, inputs=()) -> ServiceSpec:
    return ServiceSpec(
        name=name,
        version=version,
        command=("python", "-m", "conductor.demo.sleeper"),
        env_template=dict(env_template or {}),
        schema=IOSchema(inputs=tuple(inputs)),
        policy=ServicePolicy(restart_budget=0),
    )


class ServerThread:
    """uvicorn in a daemon thread, for CLI / hierarchical / dashboard tests."""

    def __init__(self, app, port: int = 0):
        self._config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
        self.server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def port(self) -> int:
        for server in self.server.servers:
            for sock in server.sockets:
                return sock.getsockname()[1]
        raise RuntimeError("server not started")

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "ServerThread":
        self._thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.02)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=5)


class ReconcileLoop:
    """Background reconcile pump for integration tests."""

    def __init__(self, engine: Engine, interval: float = 0.05):
        self._engine = engine
        self._interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                self._engine.reconcile()
            except Exception:
                pass
            self._stop.wait(self._interval)

    def start(self) -> "ReconcileLoop":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
