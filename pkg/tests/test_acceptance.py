"""End-to-end acceptance scenarios.

Each test covers one numbered criterion and emits a single PASS/FAIL line
(visible with `pytest -s` or in captured output on failure).
"""

from __future__ import annotations

import json
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import httpx
import pytest

from conductor.api import create_app, generate_tool_manifest
from conductor.backends import LocalProcessBackend, MockBackend
from conductor.backends.base import Phase
from conductor.errors import CrashInjected, NoCapacity, NoMatchingBackend
from conductor.lifecycle import EntryState, EventState, is_legal_transition
from conductor.model import (
    FieldSpec,
    IOSchema,
    ResourceConstraints,
    ServicePolicy,
    ServiceSpec,
)
from conductor.orchestrator import (
    LOCAL_PROCESS,
    MOCK,
    REMOTE_DELEGATE,
    Allocation,
    BackendDescriptor,
    Fleet,
    route,
)
from conductor.registry import Registry
from tests.conftest import CREDENTIALS, ServerThread, echo_http_spec, plain_spec
from tests.test_orchestrator import brute_force_route, constraints

HOSTNAME_RE = re.compile(r"^[a-z][a-z0-9-]*(-\d+)?-[0-9a-z]{6}\.conductor\.test$")


@contextmanager
def criterion(num: int, label: str):
    try:
        yield
    except BaseException:
        print(f"criterion {num:02d} {label}: FAIL")
        raise
    print(f"criterion {num:02d} {label}: PASS")


def wait_until(predicate, timeout: float, interval: float = 0.1):
    deadline = time.time() + timeout
    while time.time() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    raise TimeoutError(f"condition not met within {timeout}s")


def auth(credential: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {credential}"}


@pytest.fixture
def stack(make_engine, tmp_path):
    """Engine with a real local-process backend, live API server, and proxy."""
    engine = make_engine("stack")
    backend = LocalProcessBackend("local", tmp_path / "stack-runs")
    engine.register_backend(
        BackendDescriptor(id="local", kind=LOCAL_PROCESS,
                          labels=frozenset({"cpu", "web-ingress"}),
                          capacity=Allocation(100000, 100000, 0)),
        backend,
    )
    proxy = engine.start_proxy()
    server = ServerThread(create_app(engine)).start()
    from tests.conftest import ReconcileLoop
    loop = ReconcileLoop(engine).start()
    yield engine, backend, server, proxy
    loop.stop()
    server.stop()
    for eid, ev in list(engine.events.items()):
        try:
            engine.terminate_event(eid, ev.owner)
        except Exception:
            pass


def proxy_get(proxy, url: str, token: str | None):
    hostname = url.split("//", 1)[1].rstrip("/").split("/")[0]
    headers = {"Host": hostname}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return httpx.get(f"http://127.0.0.1:{proxy.port}/", headers=headers, timeout=5)


def test_acceptance_01_end_to_end_launch(stack):
    with criterion(1, "end-to-end launch"):
        engine, _, server, proxy = stack
        engine.register_service(echo_http_spec())
        resp = httpx.post(f"{server.url}/start/echo", json={},
                          headers=auth("alice-key"), timeout=10)
        assert resp.status_code == 202
        event_id = resp.json()["event_id"]

        def active():
            view = httpx.get(f"{server.url}/events/{event_id}",
                             headers=auth("alice-key"), timeout=10).json()
            return view if view["state"] == "Active" else None

        view = wait_until(active, timeout=10.0)
        url = view["entries"][0]["url"]
        token = view["token"]
        assert url and HOSTNAME_RE.match(url.split("//")[1].rstrip("/"))
        ok = proxy_get(proxy, url, token)
        assert ok.status_code == 200
        assert ok.json()["path"] == "/"
        assert proxy_get(proxy, url, None).status_code == 401


def test_acceptance_02_composition(stack):
    with criterion(2, "composition"):
        engine, backend, server, proxy = stack
        engine.register_service(echo_http_spec(name="logger"))
        engine.register_service(ServiceSpec(
            name="notebook", version="1.0.0",
            command=("python", "-m", "conductor.demo.sleeper"),
            schema=IOSchema(inputs=(FieldSpec("logging_url", "url", required=True),)),
            env_template={"LOGGING_URL": "{{input.logging_url}}",
                          "EVENT_TOKEN": "{{event.token}}",
                          "SLEEPER_SECONDS": "60"},
            policy=ServicePolicy(restart_budget=0),
        ))
        event_id = httpx.post(f"{server.url}/start/logger", json={},
                              headers=auth("alice-key"), timeout=10).json()["event_id"]

        def active():
            view = httpx.get(f"{server.url}/events/{event_id}",
                             headers=auth("alice-key"), timeout=10).json()
            return view if view["state"] == "Active" else None

        logger_url = wait_until(active, timeout=10.0)["entries"][0]["url"]
        resp = httpx.post(
            f"{server.url}/start/notebook",
            json={"event_id": event_id, "inputs": {"logging_url": logger_url}},
            headers=auth("alice-key"), timeout=10,
        )
        assert resp.status_code == 202
        notebook_entry = resp.json()["entry_id"]

        def both_running():
            view = httpx.get(f"{server.url}/events/{event_id}",
                             headers=auth("alice-key"), timeout=10).json()
            states = {e["entry_id"]: e["state"] for e in view["entries"]}
            return view if states.get(notebook_entry) == "Running" else None

        view = wait_until(both_running, timeout=10.0)
        assert len(view["entries"]) == 2

        meta = json.loads((backend.run_dir(notebook_entry) / "meta.json").read_text())
        assert meta["env"]["LOGGING_URL"] == logger_url
        assert meta["env"]["EVENT_TOKEN"] == engine.events[event_id].event_token


def test_acceptance_03_routing_oracle():
    with criterion(3, "routing oracle"):
        rng = random.Random(20260825)
        labels_pool = ["cpu", "gpu", "web-ingress", "highmem", "fpga"]
        started = time.time()
        for _ in range(1000):
            snap = []
            for i in range(rng.randint(1, 10)):
                cap = Allocation(rng.choice([0, 500, 4000, 64000]),
                                 rng.choice([0, 512, 8192, 131072]),
                                 rng.choice([0, 0, 2, 8]))
                snap.append(BackendDescriptor(
                    id=f"b{rng.randint(0, 30):02d}-{i}", kind=MOCK,
                    labels=frozenset(rng.sample(labels_pool, rng.randint(0, 3))),
                    capacity=cap,
                    allocated=Allocation(rng.randint(0, cap.cpu_millicores),
                                         rng.randint(0, cap.memory_mib),
                                         rng.randint(0, cap.gpu_count)),
                ))
            cons = constraints(
                labels=rng.sample(labels_pool, rng.randint(0, 2)),
                cpu=rng.choice([0, 100, 2000, 32000]),
                mem=rng.choice([0, 256, 4096, 65536]),
                gpu=rng.choice([0, 0, 1, 4]),
            )
            try:
                expected = brute_force_route(cons, snap)
            except (NoMatchingBackend, NoCapacity) as exc:
                with pytest.raises(type(exc)):
                    route(cons, snap)
                continue
            assert route(cons, snap) == expected

        # capacity audit over the live reservation ledger
        fleet = Fleet()
        for i in range(4):
            fleet.register_backend(BackendDescriptor(
                id=f"n{i}", kind=MOCK, labels=frozenset({"cpu"}),
                capacity=Allocation(8000, 16384, 0),
            ))
        held: list = []
        for _ in range(500):
            if held and rng.random() < 0.4:
                backend_id, cons = held.pop(rng.randrange(len(held)))
                fleet.release(backend_id, cons)
            else:
                cons = constraints(labels=("cpu",), cpu=rng.choice([500, 1000, 2000]),
                                   mem=rng.choice([256, 1024]))
                try:
                    held.append((fleet.route_and_reserve(cons), cons))
                except NoCapacity:
                    pass
            for desc in fleet.snapshot():
                assert desc.allocated.fits_within(desc.capacity)
        assert time.time() - started < 5.0


def test_acceptance_04_hierarchical_delegation(make_engine):
    with criterion(4, "hierarchical delegation"):
        child = make_engine("child")
        child_backend = MockBackend("gpu-node")
        child.register_backend(
            BackendDescriptor(id="gpu-node", kind=MOCK,
                              labels=frozenset({"cpu", "gpu"}),
                              capacity=Allocation(64000, 131072, 8)),
            child_backend,
        )
        trainer = ServiceSpec(
            name="trainer", version="1.0.0",
            constraints=ResourceConstraints(required_labels=frozenset({"gpu"}),
                                            gpu_count=1),
            policy=ServicePolicy(restart_budget=0),
        )
        child.register_service(trainer)
        child_server = ServerThread(create_app(child)).start()
        try:
            parent = make_engine("parent")
            parent.register_service(trainer)
            parent.register_backend(BackendDescriptor(
                id="cluster-a", kind=REMOTE_DELEGATE,
                labels=frozenset({"cpu", "gpu"}),
                capacity=Allocation(64000, 131072, 8),
                endpoint=child_server.url,
            ))
            alice = parent.authenticate("alice-key")
            event = parent.create_event(alice, "trainer")
            parent.reconcile()  # route + delegate provision
            assert len(child.events) == 1
            child.reconcile_to_fixed_point()
            child_entry = next(iter(child.entries.values()))
            assert child_entry.state == EntryState.RUNNING
            # one sweep after the child settles, parent status catches up
            parent.reconcile()
            parent.reconcile()
            entry = parent.entries[event.entries[0]]
            assert entry.state == EntryState.RUNNING
            assert parent.events[event.id].state == EventState.ACTIVE
            assert entry.state == child_entry.state

            parent.terminate_event(event.id, alice)
            assert next(iter(child.events.values())).state == EventState.TERMINATED
        finally:
            child_server.stop()


def test_acceptance_05_restart_semantics(make_engine):
    with criterion(5, "restart semantics"):
        for budget, end_state, end_count in ((3, EntryState.RUNNING, 2),
                                             (1, EntryState.FAILED, 1)):
            engine = make_engine(f"restart-{budget}")
            backend = MockBackend("m1")
            engine.register_backend(
                BackendDescriptor(id="m1", kind=MOCK, labels=frozenset({"cpu"}),
                                  capacity=Allocation(1000, 1000, 0)),
                backend,
            )
            engine.register_service(plain_spec(
                policy=ServicePolicy(restart_budget=budget)
            ))
            event = engine.create_event(engine.authenticate("alice-key"), "echo")
            backend.script_entry(
                event.entries[0],
                [[Phase.CRASHED], [Phase.CRASHED], [Phase.STARTING, Phase.RUNNING]],
            )
            engine.reconcile_to_fixed_point()
            entry = engine.entries[event.entries[0]]
            assert entry.state == end_state
            assert entry.restart_count == end_count


def test_acceptance_06_url_uniqueness(make_engine):
    with criterion(6, "url uniqueness"):
        engine = make_engine("urls")
        engine.register_backend(
            BackendDescriptor(id="m1", kind=MOCK,
                              labels=frozenset({"cpu", "web-ingress"}),
                              capacity=Allocation(10**9, 10**9, 0)),
            MockBackend("m1"),
        )
        engine.register_service(echo_http_spec())
        server = ServerThread(create_app(engine)).start()
        try:
            def launch(_):
                return httpx.post(f"{server.url}/start/echo", json={},
                                  headers=auth("alice-key"), timeout=30)

            with ThreadPoolExecutor(max_workers=16) as pool:
                responses = list(pool.map(launch, range(50)))
            assert all(r.status_code == 202 for r in responses)
            engine.reconcile_to_fixed_point()
            hostnames = engine.bindings.live_hostnames()
            assert len(hostnames) == 50
            assert len(set(hostnames)) == 50
            assert all(HOSTNAME_RE.match(h) for h in hostnames)
        finally:
            server.stop()


def test_acceptance_07_event_scoped_authorization(stack):
    with criterion(7, "event-scoped authorization"):
        engine, _, server, proxy = stack
        engine.register_service(echo_http_spec())
        event_id = httpx.post(f"{server.url}/start/echo", json={},
                              headers=auth("alice-key"), timeout=10).json()["event_id"]
        httpx.post(f"{server.url}/start/echo", json={"event_id": event_id},
                   headers=auth("alice-key"), timeout=10)

        def all_running():
            view = httpx.get(f"{server.url}/events/{event_id}",
                             headers=auth("alice-key"), timeout=10).json()
            states = [e["state"] for e in view["entries"]]
            return view if states == ["Running", "Running"] else None

        view = wait_until(all_running, timeout=15.0)
        urls = [e["url"] for e in view["entries"]]
        assert len(urls) == 2

        # bob's own event gives him a token scoped elsewhere
        bob_event = httpx.post(f"{server.url}/start/echo", json={},
                               headers=auth("bob-key"), timeout=10).json()["event_id"]
        bob_token = httpx.get(f"{server.url}/events/{bob_event}",
                              headers=auth("bob-key"), timeout=10).json()["token"]

        assert httpx.get(f"{server.url}/events/{event_id}",
                         headers=auth("bob-key"), timeout=10).status_code == 403
        for url in urls:
            assert proxy_get(proxy, url, bob_token).status_code == 403

        share = httpx.post(f"{server.url}/events/{event_id}/share",
                           json={"subject": "bob"}, headers=auth("alice-key"),
                           timeout=10)
        assert share.status_code == 200

        # immediately after the share returns, everything is visible at once
        as_bob = httpx.get(f"{server.url}/events/{event_id}",
                           headers=auth("bob-key"), timeout=10)
        assert as_bob.status_code == 200
        for url in urls:
            assert proxy_get(proxy, url, as_bob.json()["token"]).status_code == 200


SCENARIOS = {
    "steady": ([[Phase.STARTING, Phase.RUNNING]], 0,
               EntryState.RUNNING, EventState.ACTIVE),
    "flaky": ([[Phase.CRASHED], [Phase.CRASHED],
               [Phase.STARTING, Phase.RUNNING]], 3,
              EntryState.RUNNING, EventState.ACTIVE),
    "doomed": ([[Phase.CRASHED], [Phase.CRASHED]], 1,
               EntryState.FAILED, EventState.FAILED),
    "batch": ([[Phase.RUNNING, Phase.EXITED_OK]], 0,
              EntryState.STOPPED, EventState.COMPLETED),
}


def _crash_workload(make_engine, name: str, crash_at: int | None, partial: bool):
    """Run the 10-event workload with an optional injected crash, then recover.

    Returns (recovered_engine, backend, plan) where plan maps event ids to
    scenario names.
    """
    backend = MockBackend("m1")

    def fresh(data_name):
        return make_engine(data_name, executors={"m1": backend})

    engine = fresh(name)
    engine.register_backend(
        BackendDescriptor(id="m1", kind=MOCK, labels=frozenset({"cpu"}),
                          capacity=Allocation(10**9, 10**9, 0)),
        backend,
    )
    for scenario, (_, budget, _, _) in SCENARIOS.items():
        engine.register_service(plain_spec(
            name=scenario, policy=ServicePolicy(restart_budget=budget)
        ))
    alice = engine.authenticate("alice-key")

    if crash_at is not None:
        engine.store.crash_after_commits = engine.store._commit_count + crash_at
        engine.store.crash_partial = partial

    plan: dict[str, str] = {}
    order = [list(SCENARIOS)[i % len(SCENARIOS)] for i in range(10)]
    try:
        for scenario in order:
            event = engine.create_event(alice, scenario)
            backend.script_entry(event.entries[0], [list(s) for s in SCENARIOS[scenario][0]])
            plan[event.id] = scenario
        engine.reconcile_to_fixed_point()
    except CrashInjected:
        pass
    else:
        # no crash fired: either the clean baseline, or the injected point
        # lay past the workload's total commit count
        return engine, backend, plan

    recovered = fresh(name)
    # events persisted before the crash keep their scripted backends
    for event_id, event in recovered.events.items():
        if event_id not in plan:
            # create committed but driver never saw the id; infer from service
            plan[event_id] = recovered.entries[event.entries[0]].service[0]
    recovered.reconcile_to_fixed_point()
    return recovered, backend, plan


def _verify_workload(engine, backend, plan) -> None:
    per_entry: dict[str, str] = {}
    for rec in engine.store.read_transitions():
        prev = per_entry.get(rec["entry_id"], EntryState.PENDING)
        assert rec["from"] == prev, rec
        assert is_legal_transition(rec["from"], rec["to"]), rec
        per_entry[rec["entry_id"]] = rec["to"]
    for event_id, scenario in plan.items():
        _, _, want_entry, want_event = SCENARIOS[scenario]
        event = engine.events[event_id]
        entry = engine.entries[event.entries[0]]
        assert entry.state == want_entry, (scenario, entry.state)
        assert event.state == want_event, (scenario, event.state)
        # exactly one provision per attempt, even across the crash
        assert backend.provision_count(entry.id) == entry.restart_count + 1


def test_acceptance_08_crash_recovery(make_engine):
    with criterion(8, "crash recovery"):
        started = time.time()
        engine, backend, plan = _crash_workload(make_engine, "baseline", None, False)
        _verify_workload(engine, backend, plan)
        total_commits = engine.store._commit_count

        rng = random.Random(8)
        for i in range(100):
            crash_at = rng.randint(1, total_commits)
            partial = rng.random() < 0.5
            engine, backend, plan = _crash_workload(
                make_engine, f"crash-{i}", crash_at, partial
            )
            _verify_workload(engine, backend, plan)
        assert time.time() - started < 60.0


def test_acceptance_09_credential_hygiene(stack):
    with criterion(9, "credential hygiene"):
        engine, backend, server, proxy = stack
        engine.register_service(echo_http_spec())
        engine.register_service(ServiceSpec(
            name="worker", version="1.0.0",
            command=("python", "-m", "conductor.demo.sleeper"),
            schema=IOSchema(inputs=(FieldSpec("api_key", "secret", required=True),)),
            env_template={"API_KEY": "{{input.api_key}}",
                          "EVENT_TOKEN": "{{event.token}}",
                          "SLEEPER_SECONDS": "60"},
            policy=ServicePolicy(restart_budget=0),
        ))
        event_id = httpx.post(f"{server.url}/start/echo", json={},
                              headers=auth("alice-key"), timeout=10).json()["event_id"]
        httpx.post(f"{server.url}/start/worker",
                   json={"event_id": event_id, "inputs": {"api_key": "sk-xyz"}},
                   headers=auth("alice-key"), timeout=10)

        def settled():
            view = httpx.get(f"{server.url}/events/{event_id}",
                             headers=auth("alice-key"), timeout=10).json()
            return view if view["state"] == "Active" and all(
                e["state"] == "Running" for e in view["entries"]
            ) else None

        wait_until(settled, timeout=15.0)
        event = engine.events[event_id]
        token = event.event_token

        credential_strings = list(CREDENTIALS)
        scanned = 0
        # run directories: everything a workload can see or write
        for path in sorted((backend.root / "runs").rglob("*")):
            if not path.is_file():
                continue
            text = path.read_text(errors="replace")
            scanned += 1
            for cred in credential_strings:
                assert cred not in text, (path, cred)
            if path.name == "meta.json":
                env = json.loads(text)["env"]
                wants_token = "EVENT_TOKEN" in env
                assert (token in json.dumps(env)) == wants_token, path
        assert scanned >= 4

        # engine-side transition log and store never carry credentials
        for path in (engine.store.log_path, engine.store.transitions_path):
            text = path.read_text()
            for cred in credential_strings:
                assert cred not in text, (path, cred)
        # the echo entry's template asks for no token, so its payload has none
        echo_entry = engine.entries[event.entries[0]]
        meta = json.loads((backend.run_dir(echo_entry.id) / "meta.json").read_text())
        assert token not in json.dumps(meta["env"])


def test_acceptance_10_manifest_fidelity():
    with criterion(10, "manifest fidelity"):
        rng = random.Random(10)
        for _ in range(50):
            registry = Registry()
            live: list[tuple[str, str]] = []
            for _ in range(rng.randint(1, 30)):
                if live and rng.random() < 0.3:
                    name, version = live.pop(rng.randrange(len(live)))
                    registry.deprecate(name, version)
                else:
                    name = rng.choice(["alpha", "beta", "gamma", "delta"])
                    version = f"{rng.randint(0, 3)}.{rng.randint(0, 9)}.{rng.randint(0, 9)}"
                    try:
                        registry.register_service(ServiceSpec(name=name, version=version))
                    except Exception:
                        continue
                    live.append((name, version))

            # oracle: read the dump, keep active records, sort by (name, version)
            def vkey(v: str):
                return tuple(int(p) for p in v.split("."))

            expected = sorted(
                (
                    (r["spec"]["name"], r["spec"]["version"])
                    for r in registry.dump()
                    if r["status"] == "active"
                ),
                key=lambda nv: (nv[0], vkey(nv[1])),
            )
            manifest = generate_tool_manifest(registry)
            assert [(m["name"], m["version"]) for m in manifest] == expected
            assert all(
                set(m) == {"name", "version", "description", "input_schema",
                           "output_schema", "invoke_hint"}
                for m in manifest
            )
