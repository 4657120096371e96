"""Identity verification, event-scoped ACLs, and signed event tokens.

Tokens are stateless HMAC-signed bearer strings scoped to a single event;
user identity credentials are never embedded in payloads or persisted
artifacts, only these event-scoped tokens are.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from conductor.errors import InvalidCredential

USER_SESSION = "user-session"
ENTRY_INJECTION = "entry-injection"

DEFAULT_SESSION_TTL = 12 * 3600
DEFAULT_EVENT_TOKEN_TTL = 7 * 24 * 3600


@dataclass(frozen=True)
class Identity:
    subject: str
    provider: str
    display_name: str = ""

    def key(self) -> tuple[str, str]:
        return (self.subject, self.provider)


@dataclass
class EventACL:
    owner: Identity
    members: set[Identity] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.members.add(self.owner)

    def add(self, identity: Identity) -> None:
        self.members.add(identity)

    def allows(self, identity: Identity) -> bool:
        keys = {m.key() for m in self.members}
        return identity.key() in keys

    def to_dict(self) -> dict[str, Any]:
        return {
            "owner": identity_to_dict(self.owner),
            "members": sorted(
                (identity_to_dict(m) for m in self.members),
                key=lambda d: (d["provider"], d["subject"]),
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EventACL":
        return cls(
            owner=identity_from_dict(d["owner"]),
            members={identity_from_dict(m) for m in d.get("members", ())},
        )


def identity_to_dict(i: Identity) -> dict[str, str]:
    return {"subject": i.subject, "provider": i.provider, "display_name": i.display_name}


def identity_from_dict(d: Mapping[str, str]) -> Identity:
    return Identity(
        subject=d["subject"], provider=d["provider"], display_name=d.get("display_name", "")
    )


def authorize(acl: EventACL, identity: Identity) -> bool:
    """Pure: allow iff identity is an ACL member."""
    return acl.allows(identity)


class StaticIdentityProvider:
    """Test/desk-scale provider mapping fixed credential strings to identities."""

    def __init__(self, provider_id: str, credentials: Mapping[str, tuple[str, str]]):
        # credentials: credential string -> (subject, display_name)
        self.provider_id = provider_id
        self._credentials = dict(credentials)

    def authenticate(self, credential: str) -> Identity:
        try:
            subject, display_name = self._credentials[credential]
        except KeyError:
            raise InvalidCredential() from None
        return Identity(subject=subject, provider=self.provider_id, display_name=display_name)

    @classmethod
    def from_file(cls, path: str | Path, provider_id: str = "static") -> "StaticIdentityProvider":
        data = yaml.safe_load(Path(path).read_text()) or {}
        creds = {
            cred: (v["subject"], v.get("display_name", v["subject"]))
            for cred, v in data.items()
        }
        return cls(provider_id, creds)


@dataclass(frozen=True)
class TokenClaims:
    scope_event: str
    kind: str
    expires_at: float


class TokenService:
    """Mint/verify HMAC-SHA256 signed, event-scoped bearer tokens.

    Pure given the signing key and the injected clock.
    """

    def __init__(self, key: bytes, clock: Callable[[], float] = time.time):
        self._key = key
        self._clock = clock

    @staticmethod
    def generate_key() -> bytes:
        return secrets.token_bytes(32)

    @staticmethod
    def load_or_create_key(path: str | Path) -> bytes:
        p = Path(path)
        if p.exists():
            return p.read_bytes()
        key = TokenService.generate_key()
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(key)
        return key

    def _sign(self, body: bytes) -> str:
        mac = hmac.new(self._key, body, hashlib.sha256).digest()
        return base64.urlsafe_b64encode(mac).decode().rstrip("=")

    def mint(self, event_id: str, kind: str, ttl: float) -> str:
        claims = {
            "scope_event": event_id,
            "kind": kind,
            "expires_at": self._clock() + ttl,
        }
        body = base64.urlsafe_b64encode(
            json.dumps(claims, sort_keys=True).encode()
        ).decode().rstrip("=")
        return f"{body}.{self._sign(body.encode())}"

    def verify(self, token: str) -> TokenClaims | None:
        """Claims if signature and expiry check out, else None."""
        try:
            body_b64, sig = token.split(".", 1)
            if not hmac.compare_digest(self._sign(body_b64.encode()), sig):
                return None
            claims = json.loads(
                base64.urlsafe_b64decode(body_b64 + "=" * (-len(body_b64) % 4))
            )
        except Exception:
            return None
        if claims.get("expires_at", 0) <= self._clock():
            return None
        return TokenClaims(
            scope_event=claims["scope_event"],
            kind=claims["kind"],
            expires_at=claims["expires_at"],
        )
