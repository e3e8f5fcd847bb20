"""Transfer core: binding registry, negotiation, resolution, dispatch.

The command sender negotiates a common protocol with the receiver's node,
resolves the receiver's transfer address, marshals the command into an
envelope and hands it to the chosen binding. Received envelopes dispatch to
the registered command handler at most once per (receiver, envelope-id);
the seen set is persisted with the receiver's account.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Protocol

from ..cards import now_utc, parse_timestamp, render_timestamp
from ..errors import (
    AttemptFailed,
    DeliveryFailed,
    DuplicateProtocol,
    MalformedEnvelope,
    NoCommonProtocol,
    UnknownReceiverAccount,
)
from ..identity import AccountId, parse_account_id

PROTOCOL_VERSION = 1
LOOPBACK = "loopback"
LOOPBACK_PRIORITY = 100


class CommandKind(str, Enum):
    REQUEST_SUBSCRIPTION = "RequestSubscription"
    DECISION_SUBSCRIPTION = "DecisionSubscription"
    CANCEL_SUBSCRIPTION = "CancelSubscription"
    UNSUBSCRIBE = "Unsubscribe"
    REPATRIATE_CARD = "RepatriateCard"
    PUBLISH_CARD = "PublishCard"
    NOTICE = "Notice"


@dataclass(frozen=True)
class BindingDescriptor:
    protocol_name: str
    local_priority: int
    point_to_point: bool = True
    multicast: bool = False

    def __post_init__(self):
        if not 0 <= self.local_priority <= 100:
            raise ValueError(f"priority {self.local_priority} outside 0..100")


@dataclass(frozen=True)
class Envelope:
    envelope_id: str  # 128-bit, hex
    protocol_version: int
    sender: AccountId
    receiver: AccountId
    command: CommandKind
    payload: bytes
    sent_at: object  # datetime

    def to_json(self) -> dict:
        return {
            "envelopeId": self.envelope_id,
            "protocolVersion": self.protocol_version,
            "sender": self.sender.uri,
            "receiver": self.receiver.uri,
            "command": self.command.value,
            "payloadBase64": base64.b64encode(self.payload).decode("ascii"),
            "sentAt": render_timestamp(self.sent_at),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Envelope":
        try:
            version = int(obj["protocolVersion"])
            if version != PROTOCOL_VERSION:
                raise MalformedEnvelope(f"unsupported protocol version {version}")
            return cls(
                envelope_id=str(obj["envelopeId"]),
                protocol_version=version,
                sender=parse_account_id(str(obj["sender"])),
                receiver=parse_account_id(str(obj["receiver"])),
                command=CommandKind(obj["command"]),
                payload=base64.b64decode(obj["payloadBase64"]),
                sent_at=parse_timestamp(str(obj["sentAt"])),
            )
        except MalformedEnvelope:
            raise
        except Exception as exc:
            raise MalformedEnvelope(f"bad envelope: {exc}") from exc


def fresh_envelope(
    sender: AccountId, receiver: AccountId, command: CommandKind, payload: bytes
) -> Envelope:
    return Envelope(
        envelope_id=uuid.uuid4().hex,
        protocol_version=PROTOCOL_VERSION,
        sender=sender,
        receiver=receiver,
        command=command,
        payload=payload,
        sent_at=now_utc(),
    )


@dataclass(frozen=True)
class DeliveryReceipt:
    envelope_id: str
    protocol: str


@dataclass(frozen=True)
class MulticastEntry:
    receiver: AccountId
    ok: bool
    envelope_id: str | None = None
    protocol: str | None = None
    error: str | None = None


@dataclass(frozen=True)
class MulticastReport:
    entries: tuple[MulticastEntry, ...]

    @property
    def delivered(self) -> int:
        return sum(1 for e in self.entries if e.ok)

    @property
    def failed(self) -> int:
        return sum(1 for e in self.entries if not e.ok)


PriorityList = Iterable


def _as_pairs(entries: PriorityList) -> dict[str, int]:
    pairs: dict[str, int] = {}
    for entry in entries:
        if isinstance(entry, BindingDescriptor):
            name, priority = entry.protocol_name, entry.local_priority
        else:
            name, priority = entry
        pairs[str(name)] = int(priority)
    return pairs


def negotiate(local: PriorityList, remote: PriorityList) -> str:
    """Pick the common protocol maximizing local+remote priority.

    Ties break to the lexicographically smallest name, so the result is
    symmetric in its arguments.
    """
    local_pairs = _as_pairs(local)
    remote_pairs = _as_pairs(remote)
    common = set(local_pairs) & set(remote_pairs)
    if not common:
        raise NoCommonProtocol(
            f"no common protocol between {sorted(local_pairs)} and {sorted(remote_pairs)}"
        )
    return min(common, key=lambda name: (-(local_pairs[name] + remote_pairs[name]), name))


@dataclass(frozen=True)
class OutboundCommand:
    """A send queued during a locked state mutation, flushed after commit."""

    sender: AccountId
    receiver: AccountId
    command: CommandKind
    body: dict
    critical: bool = False  # propagate delivery failure to the caller


@dataclass
class Txn:
    """Per-operation context collecting outbound commands (publish-after-commit)."""

    outbox: list[OutboundCommand] = field(default_factory=list)

    def queue(
        self,
        sender: AccountId,
        receiver: AccountId,
        command: CommandKind,
        body: dict,
        critical: bool = False,
    ) -> None:
        self.outbox.append(OutboundCommand(sender, receiver, command, body, critical))


class Binding(Protocol):
    def send(self, address: str, envelope: Envelope) -> None: ...


@dataclass
class RegisteredBinding:
    descriptor: BindingDescriptor
    send: Callable[[str, Envelope], None]


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    backoff_base: float = 0.2
    backoff_factor: float = 2.0

    def delays(self):
        delay = self.backoff_base
        for _ in range(self.attempts - 1):
            yield delay
            delay *= self.backoff_factor


class TransferCore:
    """Per-node sender/receiver hub wired to the store and the Soul."""

    def __init__(
        self,
        is_local: Callable[[AccountId], bool],
        retry_policy: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._bindings: dict[str, RegisteredBinding] = {}
        self._lock = threading.Lock()
        self._is_local = is_local
        self.retry_policy = retry_policy or RetryPolicy()
        self._sleep = sleep
        # set by the node: CommandKind -> handler(txn, receiver, envelope)
        self.command_handlers: dict[CommandKind, Callable[[Txn, AccountId, Envelope], None]] = {}
        # set by the node: account -> store handle (seen set + dispatch lock)
        self.account_handle: Callable[[AccountId], object] | None = None
        # set by the node: flushes an outbox after locks are released
        self.flush_outbox: Callable[[Txn], list[MulticastEntry]] | None = None
        # resolution and remote-list retrieval, set by the bindings module
        self.resolve_address: Callable[[AccountId, str], str] | None = None
        self.remote_priorities: Callable[[AccountId], list[tuple[str, int]]] | None = None
        self.record_sink: Callable[[AccountId, dict], None] | None = None

    # -- binding registry --

    def register_binding(
        self, descriptor: BindingDescriptor, send_fn: Callable[[str, Envelope], None]
    ) -> None:
        with self._lock:
            if descriptor.protocol_name in self._bindings:
                raise DuplicateProtocol(f"binding {descriptor.protocol_name!r} already registered")
            self._bindings[descriptor.protocol_name] = RegisteredBinding(descriptor, send_fn)

    def bindings(self) -> list[BindingDescriptor]:
        with self._lock:
            return [b.descriptor for b in self._bindings.values()]

    def binding(self, name: str) -> RegisteredBinding:
        with self._lock:
            try:
                return self._bindings[name]
            except KeyError:
                raise NoCommonProtocol(f"binding {name!r} not registered") from None

    def local_priorities(self, for_local_peer: bool) -> list[tuple[str, int]]:
        """Advertised (protocol, priority) pairs; loopback only for co-located peers."""
        pairs = []
        for descriptor in self.bindings():
            if descriptor.protocol_name == LOOPBACK and not for_local_peer:
                continue
            pairs.append((descriptor.protocol_name, descriptor.local_priority))
        return pairs

    # -- sending --

    def send_command(
        self,
        sender: AccountId,
        receiver: AccountId,
        command: CommandKind,
        payload: bytes,
    ) -> DeliveryReceipt:
        envelope = fresh_envelope(sender, receiver, command, payload)
        return self.deliver(envelope)

    def deliver(self, envelope: Envelope) -> DeliveryReceipt:
        """Negotiate, resolve, and deliver one envelope under the retry policy."""
        receiver = envelope.receiver
        co_located = self._is_local(receiver)
        local_pairs = self.local_priorities(for_local_peer=co_located)
        last_error: Exception | None = None
        delays = list(self.retry_policy.delays()) + [None]
        for delay in delays:
            try:
                if co_located:
                    remote_pairs = self.local_priorities(for_local_peer=True)
                else:
                    remote_pairs = self.remote_priorities(receiver)
                protocol = negotiate(local_pairs, remote_pairs)
                address = self.resolve_address(receiver, protocol)
                self.binding(protocol).send(address, envelope)
                return DeliveryReceipt(envelope_id=envelope.envelope_id, protocol=protocol)
            except NoCommonProtocol:
                raise
            except AttemptFailed as exc:
                if exc.permanent:
                    raise DeliveryFailed(f"permanent failure: {exc.reason}") from exc
                last_error = exc
            except UnknownReceiverAccount:
                raise
            if delay is not None:
                self._sleep(delay)
        raise DeliveryFailed(
            f"delivery to {receiver} failed after {self.retry_policy.attempts} attempts: {last_error}"
        )

    def multicast(
        self,
        sender: AccountId,
        receivers: Iterable[AccountId],
        command: CommandKind,
        payload: bytes,
    ) -> MulticastReport:
        """One fresh envelope per recipient; failures are reported, not raised."""
        entries = []
        for receiver in receivers:
            envelope = fresh_envelope(sender, receiver, command, payload)
            try:
                receipt = self.deliver(envelope)
                entries.append(
                    MulticastEntry(
                        receiver=receiver,
                        ok=True,
                        envelope_id=receipt.envelope_id,
                        protocol=receipt.protocol,
                    )
                )
            except Exception as exc:
                entries.append(MulticastEntry(receiver=receiver, ok=False, error=str(exc)))
        return MulticastReport(entries=tuple(entries))

    # -- receiving --

    def receive_message(self, envelope: Envelope) -> None:
        """Dispatch an envelope to the Soul exactly once per (receiver, id).

        The handler mutates state and queues any outbound commands; those are
        flushed only after the receiver's lock is released, so dispatch never
        holds two accounts' locks at once.
        """
        receiver = envelope.receiver
        if not self._is_local(receiver):
            raise UnknownReceiverAccount(f"{receiver} is not provisioned on this node")
        handle = self.account_handle(receiver)
        if self.record_sink is not None:
            self.record_sink(receiver, envelope.to_json())
        txn = Txn()
        with handle.lock:
            if handle.is_seen(envelope.envelope_id):
                return
            handler = self.command_handlers.get(envelope.command)
            if handler is None:
                raise MalformedEnvelope(f"no handler for command {envelope.command.value}")
            handler(txn, receiver, envelope)
            handle.record_seen(envelope.envelope_id)
        if self.flush_outbox is not None:
            self.flush_outbox(txn)


def marshal_body(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


def unmarshal_body(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedEnvelope(f"undecodable command body: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedEnvelope("command body must be a JSON object")
    return obj
