"""Concrete transfer bindings: in-process loopback and HTTP point-to-point.

The loopback binding hands the envelope object straight to the local receive
path without touching the network; it is advertised at the fixed maximum
priority 100 and only towards co-located peers. The HTTP binding POSTs the
JSON envelope to the peer node; 4xx responses are permanent failures, 5xx and
timeouts are transient and fed to the retry policy.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from ..errors import AttemptFailed, ConfigError, UnknownAccount, UnsupportedProtocol
from ..identity import AccountId, parse_account_id
from .core import (
    LOOPBACK,
    LOOPBACK_PRIORITY,
    BindingDescriptor,
    Envelope,
    MulticastEntry,
    MulticastReport,
    TransferCore,
    fresh_envelope,
)

MESSAGE_PATH = "/deus/tp/http/v1/message"
PROTOCOLS_PATH = "/deus/tp/v1/protocols"
RESOLVE_PATH = "/deus/tp/v1/resolve"

LOCAL_MARKER = "local"
HTTP_TIMEOUT = 5.0
PRIORITY_CACHE_TTL = 5.0


@dataclass(frozen=True)
class PeerEntry:
    base_url: str  # absolute http(s) URL, or the local node marker
    protocols: tuple[tuple[str, int], ...]


class PeerTable:
    """Static bootstrap: account -> (node base URL, advertised protocols)."""

    def __init__(self, entries: dict[AccountId, PeerEntry] | None = None):
        self._entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "PeerTable":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read peer table {path}: {exc}") from exc
        entries = {}
        for uri, obj in raw.items():
            base_url = str(obj["baseUrl"])
            if base_url != LOCAL_MARKER and not base_url.startswith(("http://", "https://")):
                raise ConfigError(f"peer table entry {uri}: baseUrl must be absolute http(s)")
            protocols = tuple(
                (str(p["protocol"]), int(p["priority"])) for p in obj.get("protocols", [])
            )
            entries[parse_account_id(uri)] = PeerEntry(base_url=base_url, protocols=protocols)
        return cls(entries)

    def entry(self, account: AccountId) -> PeerEntry:
        entry = self._entries.get(account)
        if entry is None:
            raise UnknownAccount(f"{account} has no peer table entry")
        return entry

    def knows(self, account: AccountId) -> bool:
        return account in self._entries

    def accounts(self) -> list[AccountId]:
        return sorted(self._entries)


class LoopbackBinding:
    """Synchronous in-process delivery for co-located accounts."""

    descriptor = BindingDescriptor(protocol_name=LOOPBACK, local_priority=LOOPBACK_PRIORITY)

    def __init__(self, core: TransferCore):
        self._core = core

    def send(self, address: str, envelope: Envelope) -> None:
        # No serialization: the envelope object is dispatched as-is.
        self._core.receive_message(envelope)


class HttpBinding:
    """POSTs envelopes to peer nodes and counts every message that leaves."""

    def __init__(self, descriptor: BindingDescriptor, timeout: float = HTTP_TIMEOUT):
        self.descriptor = descriptor
        self.timeout = timeout
        self.messages_sent = 0
        self._lock = threading.Lock()
        self._client = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def send(self, address: str, envelope: Envelope) -> None:
        url = address.rstrip("/") + MESSAGE_PATH
        with self._lock:
            self.messages_sent += 1
        try:
            response = self._client.post(url, json=envelope.to_json())
        except httpx.HTTPError as exc:
            raise AttemptFailed(f"POST {url}: {exc}", permanent=False) from exc
        if 200 <= response.status_code < 300:
            return
        permanent = 400 <= response.status_code < 500
        raise AttemptFailed(
            f"POST {url} -> {response.status_code}: {response.text[:200]}", permanent=permanent
        )

    def fetch_priorities(self, base_url: str, account: AccountId) -> list[tuple[str, int]]:
        url = base_url.rstrip("/") + PROTOCOLS_PATH
        try:
            response = self._client.get(url, params={"account": account.uri})
            response.raise_for_status()
            return [(str(p["protocol"]), int(p["priority"])) for p in response.json()]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise AttemptFailed(f"GET {url}: {exc}", permanent=False) from exc


def http_multicast(
    binding: HttpBinding,
    addresses: list[tuple[AccountId, str]],
    sender: AccountId,
    command,
    payload: bytes,
) -> MulticastReport:
    """Application-layer multicast: one fresh envelope per recipient.

    A recipient failure never affects the envelopes sent to the others.
    """
    entries = []
    for receiver, address in addresses:
        envelope = fresh_envelope(sender, receiver, command, payload)
        try:
            binding.send(address, envelope)
            entries.append(
                MulticastEntry(
                    receiver=receiver,
                    ok=True,
                    envelope_id=envelope.envelope_id,
                    protocol=binding.descriptor.protocol_name,
                )
            )
        except AttemptFailed as exc:
            entries.append(MulticastEntry(receiver=receiver, ok=False, error=exc.reason))
    return MulticastReport(entries=tuple(entries))


class BindingSuite:
    """Wires loopback + HTTP bindings, resolution, and remote retrieval into a core."""

    def __init__(
        self,
        core: TransferCore,
        peer_table: PeerTable,
        is_local: Callable[[AccountId], bool],
        http_priority: int = 50,
        http_timeout: float = HTTP_TIMEOUT,
    ):
        if not 0 <= http_priority < LOOPBACK_PRIORITY:
            # 100 is reserved so co-located pairs always negotiate loopback.
            raise ConfigError(f"http priority must be in 0..99, got {http_priority}")
        self.core = core
        self.peer_table = peer_table
        self.is_local = is_local
        self.loopback = LoopbackBinding(core)
        self.http = HttpBinding(
            BindingDescriptor(protocol_name="http", local_priority=http_priority, multicast=True),
            timeout=http_timeout,
        )
        self._priority_cache: dict[AccountId, tuple[float, list[tuple[str, int]]]] = {}
        self._cache_lock = threading.Lock()

        core.register_binding(self.loopback.descriptor, self.loopback.send)
        core.register_binding(self.http.descriptor, self.http.send)
        core.resolve_address = self.resolve_address
        core.remote_priorities = self.remote_priorities

    def resolve_address(self, account: AccountId, protocol: str) -> str:
        if protocol == LOOPBACK:
            if not self.is_local(account):
                raise UnsupportedProtocol(f"{account} is not co-located; loopback unavailable")
            return LOCAL_MARKER
        if protocol == "http":
            entry = self.peer_table.entry(account)
            if entry.base_url == LOCAL_MARKER:
                raise UnsupportedProtocol(f"{account} is local; use loopback")
            return entry.base_url
        raise UnsupportedProtocol(f"no address resolution for protocol {protocol!r}")

    def remote_priorities(self, account: AccountId) -> list[tuple[str, int]]:
        """Retrieve the receiver node's advertised protocol list, with a short cache."""
        now = time.monotonic()
        with self._cache_lock:
            cached = self._priority_cache.get(account)
            if cached is not None and now - cached[0] < PRIORITY_CACHE_TTL:
                return cached[1]
        entry = self.peer_table.entry(account)
        if entry.base_url == LOCAL_MARKER:
            return self.core.local_priorities(for_local_peer=True)
        pairs = self.http.fetch_priorities(entry.base_url, account)
        with self._cache_lock:
            self._priority_cache[account] = (now, pairs)
        return pairs

    def close(self) -> None:
        self.http.close()
