"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ConductorError(Exception):
    """Base class for all engine errors."""

    code = "internal"


# --- model / rendering ---

class InvalidSpec(ConductorError):
    code = "invalid_spec"

    def __init__(self, report):
        self.report = report
        super().__init__(f"invalid service spec: {report.summary()}")


class MissingRequiredInput(ConductorError):
    code = "missing_required_input"

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"missing required input '{field}'")


class TypeMismatch(ConductorError):
    code = "type_mismatch"

    def __init__(self, field: str, expected: str, got: str):
        self.field = field
        self.expected = expected
        self.got = got
        super().__init__(f"input '{field}': expected {expected}, got {got}")


class UnknownInput(ConductorError):
    code = "unknown_input"

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"unknown input '{field}'")


# --- registry ---

class DuplicateVersion(ConductorError):
    code = "duplicate_version"

    def __init__(self, name: str, version: str):
        super().__init__(f"service {name}@{version} already registered")


class UnknownService(ConductorError):
    code = "unknown_service"

    def __init__(self, name: str):
        super().__init__(f"unknown service '{name}'")


class UnknownVersion(ConductorError):
    code = "unknown_version"

    def __init__(self, name: str, version: str):
        super().__init__(f"unknown version {name}@{version}")


class NoActiveVersion(ConductorError):
    code = "no_active_version"

    def __init__(self, name: str):
        super().__init__(f"service '{name}' has no active version")


class QuotaExceeded(ConductorError):
    code = "quota_exceeded"

    def __init__(self, name: str, version: str, reason: str = "quota"):
        self.reason = reason
        super().__init__(f"launch of {name}@{version} rejected: {reason}")


# --- lifecycle ---

class UnknownEvent(ConductorError):
    code = "unknown_event"

    def __init__(self, event_id: str):
        super().__init__(f"unknown event '{event_id}'")


class EventTerminal(ConductorError):
    code = "event_terminal"

    def __init__(self, event_id: str):
        super().__init__(f"event '{event_id}' is terminal")


class Unauthorized(ConductorError):
    code = "unauthorized"

    def __init__(self, detail: str = "not authorized"):
        super().__init__(detail)


class IllegalTransition(ConductorError):
    code = "illegal_transition"

    def __init__(self, from_state, to_state):
        super().__init__(f"illegal entry transition {from_state} -> {to_state}")


class InvalidInputs(ConductorError):
    code = "invalid_inputs"

    def __init__(self, detail: str):
        super().__init__(detail)


# --- authz ---

class InvalidCredential(ConductorError):
    code = "invalid_credential"

    def __init__(self):
        super().__init__("credential not recognized")


class ProviderUnavailable(ConductorError):
    code = "provider_unavailable"

    def __init__(self, provider: str):
        super().__init__(f"identity provider '{provider}' unavailable")


# --- orchestrator ---

class DuplicateBackend(ConductorError):
    code = "duplicate_backend"

    def __init__(self, backend_id: str):
        super().__init__(f"backend '{backend_id}' already registered")


class InvalidDescriptor(ConductorError):
    code = "invalid_descriptor"

    def __init__(self, detail: str):
        super().__init__(detail)


class NoMatchingBackend(ConductorError):
    code = "no_matching_backend"

    def __init__(self, labels):
        super().__init__(f"no backend carries labels {sorted(labels)}")


class NoCapacity(ConductorError):
    code = "no_capacity"

    def __init__(self, labels):
        super().__init__(f"label-matching backends lack capacity for {sorted(labels)}")


class UnbridgeablePair(ConductorError):
    code = "unbridgeable_pair"

    def __init__(self, consumer: str, producer: str):
        self.consumer = consumer
        self.producer = producer
        super().__init__(f"no single relay bridges {consumer} <- {producer}")


# --- backends ---

class LaunchFailed(ConductorError):
    code = "launch_failed"

    def __init__(self, detail: str):
        super().__init__(f"launch failed: {detail}")


class BackendUnavailable(ConductorError):
    code = "backend_unavailable"

    def __init__(self, backend_id: str, detail: str = ""):
        super().__init__(f"backend '{backend_id}' unavailable{': ' + detail if detail else ''}")


class UnknownHandle(ConductorError):
    code = "unknown_handle"

    def __init__(self, ref: str):
        super().__init__(f"unknown provision handle '{ref}'")


# --- store ---

class StoreUnavailable(ConductorError):
    code = "store_unavailable"


class ConflictRetry(ConductorError):
    code = "conflict_retry"


class CorruptLog(ConductorError):
    code = "corrupt_log"

    def __init__(self, seq: int):
        self.seq = seq
        super().__init__(f"corrupt log record near seq {seq}")


class CrashInjected(BaseException):
    """Raised by the store's fault-injection hook; derives from BaseException so
    it tears through engine code paths the way a process kill would."""
