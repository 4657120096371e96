"""Command-line client over the REST API, plus the `serve` entrypoint.

Config precedence: flags, then CONDUCTOR_URL / CONDUCTOR_TOKEN env vars, then
`~/.conductor/config` (JSON with "url" and "token"). Exit codes: 0 on 2xx,
1 on API errors, 2 on transport failure. The credential is never echoed.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Any

import click
import httpx

CONFIG_PATH = Path.home() / ".conductor" / "config"


def _load_file_config() -> dict[str, Any]:
    try:
        return json.loads(CONFIG_PATH.read_text())
    except (OSError, json.JSONDecodeError):
        return {}


class ClientConfig:
    def __init__(self, url: str | None, token: str | None, output: str):
        import os

        file_cfg = _load_file_config()
        self.url = (url or os.environ.get("CONDUCTOR_URL")
                    or file_cfg.get("url") or "http://127.0.0.1:8700")
        self.token = (token or os.environ.get("CONDUCTOR_TOKEN")
                      or file_cfg.get("token") or "")
        self.output = output

    def headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}


pass_config = click.make_pass_decorator(ClientConfig)


def _request(cfg: ClientConfig, method: str, path: str, body: dict | None = None):
    try:
        resp = httpx.request(
            method, cfg.url.rstrip("/") + path, json=body, headers=cfg.headers(),
            timeout=30,
        )
    except httpx.HTTPError as exc:
        click.echo(f"transport error: {exc}", err=True)
        sys.exit(2)
    if resp.status_code >= 400:
        try:
            err = resp.json()
            click.echo(f"error {err.get('code', resp.status_code)}: {err.get('message', '')}",
                       err=True)
        except Exception:
            click.echo(f"error: HTTP {resp.status_code}", err=True)
        sys.exit(1)
    return resp


def _emit(cfg: ClientConfig, data: Any, table_fn=None) -> None:
    if cfg.output == "json" or table_fn is None:
        click.echo(json.dumps(data, indent=2))
    else:
        table_fn(data)


def _parse_kv(pairs: tuple[str, ...]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"--in expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


@click.group()
@click.option("--url", default=None, help="API base URL.")
@click.option("--token", default=None, help="API credential (never echoed).")
@click.option("--json", "output_json", is_flag=True, help="Emit raw JSON bodies.")
@click.pass_context
def main(ctx: click.Context, url: str | None, token: str | None, output_json: bool):
    """Operate a conductor engine from the command line."""
    ctx.obj = ClientConfig(url, token, "json" if output_json else "table")


@main.command()
@click.option("-f", "--file", "spec_file", required=True, type=click.Path(exists=True))
@pass_config
def register(cfg: ClientConfig, spec_file: str):
    """Register a service from a YAML/JSON spec file."""
    import yaml

    data = yaml.safe_load(Path(spec_file).read_text())
    resp = _request(cfg, "POST", "/services", data)
    _emit(cfg, resp.json(),
          lambda d: click.echo(f"registered {d['name']}@{d['version']}"))


@main.command()
@click.argument("service")
@click.option("--version", default=None)
@click.option("--in", "inputs", multiple=True, help="Launch input key=value.")
@click.option("--event", "event_id", default=None, help="Add to an existing event.")
@click.option("--wait", is_flag=True, help="Block until Active/Failed.")
@click.option("--timeout", default=120.0, show_default=True)
@pass_config
def start(cfg: ClientConfig, service: str, version: str | None,
          inputs: tuple[str, ...], event_id: str | None, wait: bool, timeout: float):
    """Launch a service, creating an event or composing into one."""
    body: dict[str, Any] = {"inputs": _parse_kv(inputs)}
    if version:
        body["version"] = version
    if event_id:
        body["event_id"] = event_id
    resp = _request(cfg, "POST", f"/start/{service}", body)
    data = resp.json()
    if not wait:
        _emit(cfg, data, lambda d: click.echo(d["event_id"]))
        return
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = _request(cfg, "GET", f"/events/{data['event_id']}").json()
        if status["state"] in ("Active", "Failed", "Degraded", "Completed", "Terminated"):
            _emit(cfg, status, _print_status)
            sys.exit(0 if status["state"] == "Active" else 1)
        time.sleep(1.0)
    click.echo("timed out waiting for event to settle", err=True)
    sys.exit(1)


def _print_status(view: dict[str, Any]) -> None:
    click.echo(f"event {view['event_id']}  state={view['state']}")
    for entry in view["entries"]:
        url = f"  url={entry['url']}" if entry.get("url") else ""
        click.echo(
            f"  {entry['entry_id']}  {entry['service'][0]}@{entry['service'][1]}"
            f"  {entry['state']}  restarts={entry['restart_count']}{url}"
        )


@main.command()
@click.argument("event_id")
@pass_config
def status(cfg: ClientConfig, event_id: str):
    """Show an event's state and entry URLs."""
    resp = _request(cfg, "GET", f"/events/{event_id}")
    _emit(cfg, resp.json(), _print_status)


@main.command()
@click.argument("event_id")
@click.argument("subject")
@click.option("--provider", default="static", show_default=True)
@pass_config
def share(cfg: ClientConfig, event_id: str, subject: str, provider: str):
    """Grant another identity access to an event."""
    resp = _request(cfg, "POST", f"/events/{event_id}/share",
                    {"subject": subject, "provider": provider})
    _emit(cfg, resp.json(),
          lambda d: click.echo(f"members: {', '.join(m['subject'] for m in d['members'])}"))


@main.command()
@click.argument("event_id")
@pass_config
def stop(cfg: ClientConfig, event_id: str):
    """Terminate an event and all its entries."""
    resp = _request(cfg, "DELETE", f"/events/{event_id}")
    _emit(cfg, resp.json(), _print_status)


@main.command()
@pass_config
def services(cfg: ClientConfig):
    """List registered services."""
    resp = _request(cfg, "GET", "/services")
    def table(rows):
        for r in rows:
            click.echo(f"{r['name']}@{r['version']}  {r['status']}"
                       f"  live={r['live_entry_count']}")
    _emit(cfg, resp.json(), table)


@main.command()
@pass_config
def backends(cfg: ClientConfig):
    """List registered backends."""
    resp = _request(cfg, "GET", "/backends")
    def table(rows):
        for r in rows:
            click.echo(f"{r['id']}  {r['kind']}  labels={','.join(r['labels'])}")
    _emit(cfg, resp.json(), table)


@main.command()
@pass_config
def manifest(cfg: ClientConfig):
    """Fetch the agent-facing tool manifest."""
    resp = _request(cfg, "GET", "/manifest")
    _emit(cfg, resp.json(), None)


@main.group()
def admin():
    """Administrative helpers."""


@admin.command()
@click.option("--data-dir", required=True, type=click.Path())
def dump(data_dir: str):
    """Export the engine's full persisted state as JSON (test oracle)."""
    from conductor.lifecycle import Engine, EngineConfig

    engine = Engine(EngineConfig(data_dir=data_dir))
    click.echo(json.dumps(engine._state_dump(), indent=2))


@main.command()
@click.option("--data-dir", default="./conductor-data", show_default=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8700, show_default=True)
@click.option("--proxy-port", default=8780, show_default=True)
@click.option("--base-domain", default="conductor.local", show_default=True)
@click.option("--credentials-file", default=None, type=click.Path(exists=True),
              help="YAML map of credential -> {subject, display_name}.")
@click.option("--fleet-config", default=None, type=click.Path(exists=True),
              help="YAML/JSON list of backend descriptors.")
@click.option("--service-dir", default=None, type=click.Path(exists=True),
              help="Directory of service spec files to register at startup.")
@click.option("--interval", default=1.0, show_default=True, help="Reconcile interval (s).")
def serve(data_dir: str, host: str, port: int, proxy_port: int, base_domain: str,
          credentials_file: str | None, fleet_config: str | None,
          service_dir: str | None, interval: float):
    """Run the engine: REST API, reconcile loop, and token-gated proxy."""
    import threading

    import uvicorn

    from conductor.api import create_app
    from conductor.authz import StaticIdentityProvider
    from conductor.backends import LocalProcessBackend
    from conductor.errors import DuplicateBackend, DuplicateVersion
    from conductor.lifecycle import Engine, EngineConfig
    from conductor.model import load_service_spec
    from conductor.orchestrator import (
        LOCAL_PROCESS, Allocation, BackendDescriptor, load_fleet_config,
    )

    providers = []
    if credentials_file:
        providers.append(StaticIdentityProvider.from_file(credentials_file))
    engine = Engine(
        EngineConfig(data_dir=data_dir, base_domain=base_domain,
                     reconcile_interval=interval),
        providers=providers,
    )

    descriptors = (
        load_fleet_config(fleet_config) if fleet_config
        else [BackendDescriptor(
            id="local", kind=LOCAL_PROCESS, labels=frozenset({"cpu", "web-ingress"}),
            capacity=Allocation(cpu_millicores=16000, memory_mib=32768),
        )]
    )
    for desc in descriptors:
        executor = None
        if desc.kind == LOCAL_PROCESS:
            executor = LocalProcessBackend(desc.id, Path(data_dir))
        try:
            engine.register_backend(desc, executor)
        except DuplicateBackend:
            if executor is not None:
                engine._executors[desc.id] = executor

    if service_dir:
        for spec_path in sorted(Path(service_dir).glob("*.y*ml")) + \
                sorted(Path(service_dir).glob("*.json")):
            try:
                engine.register_service(load_service_spec(spec_path))
            except DuplicateVersion:
                pass

    engine.start_proxy(host=host, port=proxy_port)

    stop_flag = threading.Event()

    def loop():
        while not stop_flag.is_set():
            try:
                engine.reconcile()
            except Exception as exc:
                click.echo(f"reconcile error: {exc}", err=True)
            stop_flag.wait(interval)

    thread = threading.Thread(target=loop, daemon=True)
    thread.start()

    click.echo(f"conductor API on http://{host}:{port}, proxy on port {engine.proxy.port}")
    try:
        uvicorn.run(create_app(engine), host=host, port=port, log_level="warning")
    finally:
        stop_flag.set()
        engine.stop_proxy()


if __name__ == "__main__":
    main()
