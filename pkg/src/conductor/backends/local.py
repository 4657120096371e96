"""Backend that really runs services as local processes at desk scale.

Per-entry working directory layout: runs/<entry_id>/{stdout.log, stderr.log,
meta.json}. Sidecars run as plain sibling processes sharing the entry's
working directory. cpu/memory/gpu numbers are accounting only, not enforced.
"""

from __future__ import annotations

import json
import os
import signal
import socket
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from conductor.backends.base import (
    Backend,
    Observation,
    Phase,
    ProvisionHandle,
    ProvisionRequest,
    observation,
)
from conductor.errors import LaunchFailed, UnknownHandle


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _port_open(host: str, port: int, timeout: float = 0.2) -> bool:
    try:
        with socket.create_connection((host, port), timeout=timeout):
            return True
    except OSError:
        return False


def _resolve_command(command: tuple[str, ...]) -> list[str]:
    # "python" in a spec command means "the interpreter running the engine"
    argv = list(command)
    if argv and argv[0] in ("python", "python3"):
        argv[0] = sys.executable
    return argv


@dataclass
class _Run:
    handle: ProvisionHandle
    main: subprocess.Popen
    sidecars: list[subprocess.Popen] = field(default_factory=list)
    web_entry: bool = False
    torn_down: bool = False


class LocalProcessBackend(Backend):
    def __init__(self, backend_id: str, root_dir: str | Path):
        self.id = backend_id
        self.root = Path(root_dir)
        self._runs: dict[str, _Run] = {}
        self._by_attempt: dict[tuple[str, int], str] = {}
        self._lock = threading.RLock()

    def run_dir(self, entry_id: str) -> Path:
        return self.root / "runs" / entry_id

    # --- contract ------------------------------------------------------------

    def provision(self, request: ProvisionRequest) -> ProvisionHandle:
        payload = request.payload
        entry_id = payload.entry_id
        with self._lock:
            key = (entry_id, request.attempt)
            if key in self._by_attempt:
                return self._runs[self._by_attempt[key]].handle

            workdir = self.run_dir(entry_id)
            workdir.mkdir(parents=True, exist_ok=True)

            env = dict(os.environ)
            env.update(payload.resolved_env)
            ports: list[int] = []
            for i, _ in enumerate(payload.ports):
                p = free_port()
                ports.append(p)
                env[f"PORT_{i}"] = str(p)
            if ports:
                env["PORT"] = str(ports[0])

            stdout = open(workdir / "stdout.log", "ab")
            stderr = open(workdir / "stderr.log", "ab")
            if not payload.command:
                raise LaunchFailed("payload has no command to execute")
            try:
                main = subprocess.Popen(
                    _resolve_command(payload.command),
                    cwd=workdir,
                    env=env,
                    stdout=stdout,
                    stderr=stderr,
                    start_new_session=True,
                )
            except OSError as exc:
                raise LaunchFailed(str(exc)) from exc
            finally:
                stdout.close()
                stderr.close()

            sidecars: list[subprocess.Popen] = []
            for sc in payload.sidecars:
                try:
                    proc = subprocess.Popen(
                        _resolve_command(sc.command),
                        cwd=workdir,
                        env=env,
                        stdout=open(workdir / f"{sc.name}.stdout.log", "ab"),
                        stderr=open(workdir / f"{sc.name}.stderr.log", "ab"),
                        start_new_session=True,
                    )
                except OSError as exc:
                    main.kill()
                    for p in sidecars:
                        p.kill()
                    raise LaunchFailed(f"sidecar {sc.name}: {exc}") from exc
                sidecars.append(proc)

            ref = f"{self.id}-{entry_id}-{request.attempt}-{main.pid}"
            endpoint = ("127.0.0.1", ports[0]) if ports else None
            handle = ProvisionHandle(
                backend_id=self.id,
                entry_id=entry_id,
                native_ref=ref,
                endpoint=endpoint,
                sidecar_refs=tuple(str(p.pid) for p in sidecars),
            )
            meta = {
                "entry_id": entry_id,
                "service": list(payload.service),
                "attempt": request.attempt,
                "env": dict(payload.resolved_env),
                "ports": ports,
                "pid": main.pid,
                "sidecar_pids": [p.pid for p in sidecars],
                "started_at": time.time(),
            }
            (workdir / "meta.json").write_text(json.dumps(meta, indent=2))

            self._runs[ref] = _Run(
                handle=handle, main=main, sidecars=sidecars, web_entry=bool(ports)
            )
            self._by_attempt[key] = ref
            return handle

    def probe(self, handle: ProvisionHandle) -> Observation:
        with self._lock:
            run = self._runs.get(handle.native_ref)
        if run is None:
            raise UnknownHandle(handle.native_ref)
        if run.torn_down:
            return observation(Phase.UNKNOWN, "handle retired")
        code = run.main.poll()
        if code is None:
            if run.web_entry and run.handle.endpoint is not None:
                host, port = run.handle.endpoint
                if not _port_open(host, port):
                    return observation(Phase.STARTING, "port not yet accepting")
            return observation(Phase.RUNNING, f"pid {run.main.pid}")
        if code == 0:
            return observation(Phase.EXITED_OK, "exit 0")
        return observation(Phase.CRASHED, f"exit {code}")

    def teardown(self, handle: ProvisionHandle) -> None:
        with self._lock:
            run = self._runs.get(handle.native_ref)
            if run is None or run.torn_down:
                return
            run.torn_down = True
        for proc in [run.main, *run.sidecars]:
            if proc.poll() is None:
                try:
                    os.killpg(os.getpgid(proc.pid), signal.SIGTERM)
                except (ProcessLookupError, PermissionError):
                    proc.terminate()
        deadline = time.time() + 3.0
        for proc in [run.main, *run.sidecars]:
            remaining = max(0.05, deadline - time.time())
            try:
                proc.wait(timeout=remaining)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait(timeout=2.0)
