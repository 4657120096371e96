"""Schema-driven domain types for services, plus spec validation and launch
payload rendering.

All types here are immutable after construction and every operation is pure,
so values can be shared freely across threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from conductor.errors import MissingRequiredInput, TypeMismatch, UnknownInput

FIELD_KINDS = ("string", "integer", "number", "boolean", "url", "secret")

_FIELD_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_SERVICE_NAME_RE = re.compile(r"^[a-z][a-z0-9-]*$")
_VERSION_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")
_PLACEHOLDER_RE = re.compile(r"\{\{\s*([a-zA-Z0-9_.]+)\s*\}\}")

SERVICE_NAME_MAX_LEN = 40


def parse_version(version: str) -> tuple[int, int, int]:
    """Strict three-component numeric version; prerelease tags rejected."""
    m = _VERSION_RE.match(version)
    if not m:
        raise ValueError(f"not a major.minor.patch version: {version!r}")
    return (int(m.group(1)), int(m.group(2)), int(m.group(3)))


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    required: bool = False
    default: Any = None
    description: str = ""


@dataclass(frozen=True)
class IOSchema:
    inputs: tuple[FieldSpec, ...] = ()
    outputs: tuple[FieldSpec, ...] = ()

    def input(self, name: str) -> FieldSpec | None:
        for f in self.inputs:
            if f.name == name:
                return f
        return None


@dataclass(frozen=True)
class ResourceConstraints:
    required_labels: frozenset[str] = frozenset()
    cpu_millicores: int = 0
    memory_mib: int = 0
    gpu_count: int = 0


@dataclass(frozen=True)
class SidecarSpec:
    name: str
    image_ref: str = ""
    command: tuple[str, ...] = ()
    ports: tuple[int, ...] = ()


@dataclass(frozen=True)
class ServicePolicy:
    max_concurrent_entries: int | None = None  # None = unlimited
    restart_budget: int = 0
    ttl_seconds: int | None = None


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    version: str
    image_ref: str = ""
    command: tuple[str, ...] = ()
    env_template: Mapping[str, str] = field(default_factory=dict)
    ports: tuple[int, ...] = ()
    schema: IOSchema = field(default_factory=IOSchema)
    constraints: ResourceConstraints = field(default_factory=ResourceConstraints)
    sidecars: tuple[SidecarSpec, ...] = ()
    web_entry: bool = False
    policy: ServicePolicy = field(default_factory=ServicePolicy)

    @property
    def version_key(self) -> tuple[int, int, int]:
        return parse_version(self.version)


@dataclass(frozen=True)
class LaunchPayload:
    """Fully-resolved launch description handed to a backend.

    Carries only the event-scoped token, never a user identity credential.
    """

    service: tuple[str, str]
    resolved_env: Mapping[str, str]
    ports: tuple[int, ...]
    sidecars: tuple[SidecarSpec, ...]
    constraints: ResourceConstraints
    event_token: str
    entry_id: str
    command: tuple[str, ...] = ()
    image_ref: str = ""

    def digest(self) -> str:
        canon = json.dumps(
            {
                "service": list(self.service),
                "resolved_env": dict(sorted(self.resolved_env.items())),
                "ports": list(self.ports),
                "sidecars": [s.name for s in self.sidecars],
                "entry_id": self.entry_id,
                "command": list(self.command),
            },
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(f"{v.path}: {v.message}" for v in self.violations)


def _check_field_specs(fields: Iterable[FieldSpec], path: str, out: list[Violation]) -> None:
    seen: set[str] = set()
    for i, f in enumerate(fields):
        p = f"{path}[{i}]"
        if not _FIELD_NAME_RE.match(f.name):
            out.append(Violation(p, f"invalid field name {f.name!r}"))
        if f.kind not in FIELD_KINDS:
            out.append(Violation(p, f"unknown kind {f.kind!r}"))
        if f.required and f.default is not None:
            out.append(Violation(p, "required field must not carry a default"))
        if f.default is not None and f.kind in FIELD_KINDS:
            err = _literal_type_error(f.kind, f.default)
            if err:
                out.append(Violation(p, f"default {err}"))
        if f.name in seen:
            out.append(Violation(p, f"duplicate field name {f.name!r}"))
        seen.add(f.name)


def _literal_type_error(kind: str, value: Any) -> str | None:
    """None if value matches kind, else a short description of the mismatch."""
    if kind == "boolean":
        return None if isinstance(value, bool) else f"expected boolean, got {type(value).__name__}"
    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            return f"expected integer, got {type(value).__name__}"
        return None
    if kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return f"expected number, got {type(value).__name__}"
        return None
    if kind in ("string", "secret"):
        return None if isinstance(value, str) else f"expected string, got {type(value).__name__}"
    if kind == "url":
        if not isinstance(value, str):
            return f"expected url string, got {type(value).__name__}"
        if "://" not in value:
            return f"url missing scheme: {value!r}"
        return None
    return f"unknown kind {kind!r}"


def validate_service_spec(spec: ServiceSpec) -> ValidationReport:
    """Check every invariant; violations enumerate all failures, not just the first."""
    out: list[Violation] = []

    if not _SERVICE_NAME_RE.match(spec.name) or len(spec.name) > SERVICE_NAME_MAX_LEN:
        out.append(Violation("name", f"invalid service name {spec.name!r}"))
    try:
        parse_version(spec.version)
    except ValueError:
        out.append(Violation("version", f"invalid version {spec.version!r}"))

    _check_field_specs(spec.schema.inputs, "schema.inputs", out)
    _check_field_specs(spec.schema.outputs, "schema.outputs", out)

    c = spec.constraints
    for dim in ("cpu_millicores", "memory_mib", "gpu_count"):
        if getattr(c, dim) < 0:
            out.append(Violation(f"constraints.{dim}", "must be non-negative"))
    if c.gpu_count > 0 and "gpu" not in c.required_labels:
        out.append(Violation("constraints", "gpu label missing"))

    sidecar_names: set[str] = set()
    for i, sc in enumerate(spec.sidecars):
        p = f"sidecars[{i}]"
        if not _FIELD_NAME_RE.match(sc.name.replace("-", "_")):
            out.append(Violation(p, f"invalid sidecar name {sc.name!r}"))
        if sc.name == "main":
            out.append(Violation(p, "sidecar name 'main' is reserved"))
        if sc.name in sidecar_names:
            out.append(Violation(p, f"duplicate sidecar name {sc.name!r}"))
        sidecar_names.add(sc.name)

    if spec.web_entry and not spec.ports:
        out.append(Violation("ports", "web_entry service must declare at least one port"))

    declared = {f.name for f in spec.schema.inputs}
    for env_name, template in spec.env_template.items():
        for ref in _PLACEHOLDER_RE.findall(template):
            if ref == "event.token":
                continue
            if ref.startswith("input."):
                if ref[len("input."):] not in declared:
                    out.append(Violation(
                        "env_template", f"unknown input '{ref[len('input.'):]}' in {env_name}"))
            else:
                out.append(Violation("env_template", f"unknown placeholder '{ref}' in {env_name}"))

    p = spec.policy
    if p.max_concurrent_entries is not None and p.max_concurrent_entries < 1:
        out.append(Violation("policy.max_concurrent_entries", "must be positive or unlimited"))
    if p.restart_budget < 0:
        out.append(Violation("policy.restart_budget", "must be non-negative"))
    if p.ttl_seconds is not None and p.ttl_seconds < 1:
        out.append(Violation("policy.ttl_seconds", "must be positive when set"))

    return ValidationReport(tuple(out))


def _stringify(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def render_launch_payload(
    spec: ServiceSpec,
    inputs: Mapping[str, Any],
    event_token: str,
    entry_id: str,
) -> LaunchPayload:
    """Resolve env templates against typed inputs; deterministic for identical args."""
    declared = {f.name: f for f in spec.schema.inputs}
    for name in inputs:
        if name not in declared:
            raise UnknownInput(name)

    resolved_inputs: dict[str, Any] = {}
    for f in spec.schema.inputs:
        if f.name in inputs:
            value = inputs[f.name]
            err = _literal_type_error(f.kind, value)
            if err:
                raise TypeMismatch(f.name, f.kind, type(value).__name__)
            resolved_inputs[f.name] = value
        elif f.default is not None:
            resolved_inputs[f.name] = f.default
        elif f.required:
            raise MissingRequiredInput(f.name)

    def expand(template: str) -> str:
        def sub(m: re.Match[str]) -> str:
            ref = m.group(1)
            if ref == "event.token":
                return event_token
            if ref.startswith("input."):
                name = ref[len("input."):]
                if name not in resolved_inputs:
                    raise MissingRequiredInput(name)
                return _stringify(resolved_inputs[name])
            raise UnknownInput(ref)

        return _PLACEHOLDER_RE.sub(sub, template)

    resolved_env = {k: expand(v) for k, v in spec.env_template.items()}
    for value in resolved_env.values():
        assert "{{" not in value, "unexpanded placeholder survived rendering"

    return LaunchPayload(
        service=(spec.name, spec.version),
        resolved_env=resolved_env,
        ports=spec.ports,
        sidecars=spec.sidecars,
        constraints=spec.constraints,
        event_token=event_token,
        entry_id=entry_id,
        command=spec.command,
        image_ref=spec.image_ref,
    )


def secret_input_names(spec: ServiceSpec) -> frozenset[str]:
    return frozenset(f.name for f in spec.schema.inputs if f.kind == "secret")


# --- serialization -----------------------------------------------------------

def field_spec_to_dict(f: FieldSpec) -> dict[str, Any]:
    d: dict[str, Any] = {"name": f.name, "kind": f.kind, "required": f.required}
    if f.default is not None:
        d["default"] = f.default
    if f.description:
        d["description"] = f.description
    return d


def spec_to_dict(spec: ServiceSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "version": spec.version,
        "image_ref": spec.image_ref,
        "command": list(spec.command),
        "env_template": dict(spec.env_template),
        "ports": list(spec.ports),
        "schema": {
            "inputs": [field_spec_to_dict(f) for f in spec.schema.inputs],
            "outputs": [field_spec_to_dict(f) for f in spec.schema.outputs],
        },
        "constraints": {
            "required_labels": sorted(spec.constraints.required_labels),
            "cpu_millicores": spec.constraints.cpu_millicores,
            "memory_mib": spec.constraints.memory_mib,
            "gpu_count": spec.constraints.gpu_count,
        },
        "sidecars": [
            {"name": s.name, "image_ref": s.image_ref,
             "command": list(s.command), "ports": list(s.ports)}
            for s in spec.sidecars
        ],
        "web_entry": spec.web_entry,
        "policy": {
            "max_concurrent_entries": spec.policy.max_concurrent_entries,
            "restart_budget": spec.policy.restart_budget,
            "ttl_seconds": spec.policy.ttl_seconds,
        },
    }


def _field_spec_from_dict(d: Mapping[str, Any]) -> FieldSpec:
    return FieldSpec(
        name=d["name"],
        kind=d["kind"],
        required=bool(d.get("required", False)),
        default=d.get("default"),
        description=d.get("description", ""),
    )


def spec_from_dict(d: Mapping[str, Any]) -> ServiceSpec:
    schema = d.get("schema") or {}
    constraints = d.get("constraints") or {}
    policy = d.get("policy") or {}
    return ServiceSpec(
        name=d["name"],
        version=d["version"],
        image_ref=d.get("image_ref", ""),
        command=tuple(d.get("command") or ()),
        env_template=dict(d.get("env_template") or {}),
        ports=tuple(d.get("ports") or ()),
        schema=IOSchema(
            inputs=tuple(_field_spec_from_dict(f) for f in schema.get("inputs") or ()),
            outputs=tuple(_field_spec_from_dict(f) for f in schema.get("outputs") or ()),
        ),
        constraints=ResourceConstraints(
            required_labels=frozenset(constraints.get("required_labels") or ()),
            cpu_millicores=int(constraints.get("cpu_millicores", 0)),
            memory_mib=int(constraints.get("memory_mib", 0)),
            gpu_count=int(constraints.get("gpu_count", 0)),
        ),
        sidecars=tuple(
            SidecarSpec(
                name=s["name"],
                image_ref=s.get("image_ref", ""),
                command=tuple(s.get("command") or ()),
                ports=tuple(s.get("ports") or ()),
            )
            for s in d.get("sidecars") or ()
        ),
        web_entry=bool(d.get("web_entry", False)),
        policy=ServicePolicy(
            max_concurrent_entries=policy.get("max_concurrent_entries"),
            restart_budget=int(policy.get("restart_budget", 0)),
            ttl_seconds=policy.get("ttl_seconds"),
        ),
    )


def load_service_spec(path: str | Path) -> ServiceSpec:
    """Load a ServiceSpec from a YAML or JSON file."""
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"service spec file {path} does not contain a mapping")
    return spec_from_dict(data)
