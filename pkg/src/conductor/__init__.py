"""Conductor: an API-first service orchestration engine.

Registers schema-described services, routes launches to capability-labeled
backends (including other engine instances acting as sub-orchestrators),
manages event/entry lifecycles with automatic restart, allocates unique
token-gated URLs, and enforces event-scoped authorization.
"""

__version__ = "0.1.0"
