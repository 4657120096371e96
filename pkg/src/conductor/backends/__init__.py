"""Executor backends satisfying the provision/probe/teardown contract."""

from conductor.backends.base import (
    Backend,
    Observation,
    Phase,
    ProvisionHandle,
    ProvisionRequest,
)
from conductor.backends.local import LocalProcessBackend
from conductor.backends.mock import MockBackend
from conductor.backends.remote import RemoteDelegateBackend

__all__ = [
    "Backend",
    "Observation",
    "Phase",
    "ProvisionHandle",
    "ProvisionRequest",
    "LocalProcessBackend",
    "MockBackend",
    "RemoteDelegateBackend",
]
