"""Boot a throwaway conductor engine for dashboard tests.

Usage: python3 serve_engine.py <data-dir>
Prints one JSON line {"api": ..., "proxy_port": ...} once ready, then serves
until killed.
"""

from __future__ import annotations

import json
import sys
import threading
from pathlib import Path

import uvicorn

from conductor.api import create_app
from conductor.authz import StaticIdentityProvider
from conductor.backends import LocalProcessBackend
from conductor.lifecycle import Engine, EngineConfig
from conductor.model import (
    ResourceConstraints,
    ServicePolicy,
    ServiceSpec,
)
from conductor.orchestrator import LOCAL_PROCESS, Allocation, BackendDescriptor

CREDENTIALS = {
    "alice-key": ("alice", "Alice"),
    "bob-key": ("bob", "Bob"),
}


def main() -> None:
    data_dir = Path(sys.argv[1])
    engine = Engine(
        EngineConfig(data_dir=data_dir / "state", fsync=False,
                     base_domain="conductor.test"),
        providers=[StaticIdentityProvider("static", CREDENTIALS)],
    )
    engine.register_backend(
        BackendDescriptor(id="local", kind=LOCAL_PROCESS,
                          labels=frozenset({"cpu", "web-ingress"}),
                          capacity=Allocation(100000, 100000, 0)),
        LocalProcessBackend("local", data_dir / "runs"),
    )
    engine.register_service(ServiceSpec(
        name="echo", version="1.0.0",
        command=("python", "-m", "conductor.demo.echo"),
        ports=(8000,), web_entry=True,
        constraints=ResourceConstraints(required_labels=frozenset({"web-ingress"})),
        policy=ServicePolicy(restart_budget=1),
    ))
    proxy = engine.start_proxy()

    stop = threading.Event()

    def loop() -> None:
        while not stop.is_set():
            try:
                engine.reconcile()
            except Exception:
                pass
            stop.wait(0.1)

    threading.Thread(target=loop, daemon=True).start()

    config = uvicorn.Config(create_app(engine), host="127.0.0.1", port=0,
                            log_level="error")
    server = uvicorn.Server(config)

    def announce() -> None:
        while not server.started:
            stop.wait(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        print(json.dumps({"api": f"http://127.0.0.1:{port}",
                          "proxy_port": proxy.port}), flush=True)

    threading.Thread(target=announce, daemon=True).start()
    try:
        server.run()
    finally:
        stop.set()
        engine.stop_proxy()


if __name__ == "__main__":
    main()
