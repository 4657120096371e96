"""Identity, ACL membership, and signed event-scoped tokens."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from conductor.authz import (
    ENTRY_INJECTION,
    USER_SESSION,
    EventACL,
    Identity,
    StaticIdentityProvider,
    TokenService,
    authorize,
)
from conductor.errors import InvalidCredential

ALICE = Identity("alice", "static", "Alice")
BOB = Identity("bob", "static", "Bob")
CAROL = Identity("carol", "static")


class TestProvider:
    def test_known_credential(self, provider):
        assert provider.authenticate("alice-key") == ALICE

    def test_unknown_credential(self, provider):
        with pytest.raises(InvalidCredential):
            provider.authenticate("wrong")

    def test_from_file(self, tmp_path):
        path = tmp_path / "creds.yaml"
        path.write_text("k1:\n  subject: dana\n  display_name: Dana\n")
        p = StaticIdentityProvider.from_file(path)
        assert p.authenticate("k1") == Identity("dana", "static", "Dana")


class TestACL:
    def test_owner_is_member(self):
        assert authorize(EventACL(owner=ALICE), ALICE)

    def test_non_member_denied(self):
        assert not authorize(EventACL(owner=ALICE), BOB)

    def test_share_grants(self):
        acl = EventACL(owner=ALICE)
        acl.add(BOB)
        assert authorize(acl, BOB)

    def test_display_name_irrelevant_to_membership(self):
        acl = EventACL(owner=ALICE)
        assert authorize(acl, Identity("alice", "static", "other name"))

    def test_provider_is_part_of_key(self):
        acl = EventACL(owner=ALICE)
        assert not authorize(acl, Identity("alice", "oidc"))

    def test_dict_roundtrip(self):
        acl = EventACL(owner=ALICE)
        acl.add(BOB)
        acl.add(CAROL)
        clone = EventACL.from_dict(acl.to_dict())
        assert clone.owner == acl.owner
        assert clone.members == acl.members


class TestTokens:
    def make(self, now=(lambda: 1000.0)) -> TokenService:
        return TokenService(b"k" * 32, clock=now)

    def test_mint_verify_roundtrip(self):
        svc = self.make()
        claims = svc.verify(svc.mint("ev1", USER_SESSION, ttl=60))
        assert claims is not None
        assert claims.scope_event == "ev1"
        assert claims.kind == USER_SESSION
        assert claims.expires_at == 1060.0

    def test_expired_token_rejected(self):
        now = [1000.0]
        svc = TokenService(b"k" * 32, clock=lambda: now[0])
        token = svc.mint("ev1", ENTRY_INJECTION, ttl=60)
        now[0] = 1059.9
        assert svc.verify(token) is not None
        now[0] = 1060.0
        assert svc.verify(token) is None

    def test_wrong_key_rejected(self):
        token = self.make().mint("ev1", USER_SESSION, ttl=60)
        assert TokenService(b"x" * 32, clock=lambda: 1000.0).verify(token) is None

    def test_garbage_rejected(self):
        svc = self.make()
        for bad in ("", "no-dot", "a.b", "a.b.c", "\x00\xff"):
            assert svc.verify(bad) is None

    @given(st.integers(0, 200), st.sampled_from("AZaz09_=."))
    def test_tampered_token_rejected(self, pos, repl):
        svc = self.make()
        token = svc.mint("ev1", USER_SESSION, ttl=60)
        pos %= len(token)
        if token[pos] == repl:
            return
        tampered = token[:pos] + repl + token[pos + 1:]
        assert svc.verify(tampered) is None

    def test_scope_binds_to_event(self):
        svc = self.make()
        token = svc.mint("ev1", USER_SESSION, ttl=60)
        assert svc.verify(token).scope_event == "ev1"
        assert svc.verify(token).scope_event != "ev2"

    def test_load_or_create_key_stable(self, tmp_path):
        path = tmp_path / "keys" / "signing.key"
        k1 = TokenService.load_or_create_key(path)
        k2 = TokenService.load_or_create_key(path)
        assert k1 == k2 and len(k1) == 32
