"""Lateral system-to-user interaction: pleas, notifications, and their history.

Pleas demand a verdict and transition pending -> granted/denied exactly once;
notifications transition unread -> read. Every add/decide/mark event appends a
history record, never overwriting earlier ones. Decision handlers are
registered declaratively per subject (not as closures), so a plea decided
after a node restart still routes to the right subsystem.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable

from .cards import CardId, now_utc, parse_timestamp, render_timestamp
from .errors import NotAPlea, NotPending, NotUnread, UnknownElement
from .identity import AccountId, parse_account_id

if TYPE_CHECKING:
    from .node import Txn
    from .store import AccountHandle, NodeStore


class ElementKind(str, Enum):
    PLEA = "plea"
    NOTIFICATION = "notification"


class Subject(str, Enum):
    REPATRIATION = "repatriation"
    SUBSCRIPTION_REQUEST = "subscription-request"
    MANUAL_SELECTION = "manual-selection"
    DELETION_DEMAND = "deletion-demand"
    GENERIC_NOTICE = "generic-notice"


class ElementState(str, Enum):
    PENDING = "pending"
    GRANTED = "granted"
    DENIED = "denied"
    UNREAD = "unread"
    READ = "read"


PayloadRef = CardId | AccountId | str


def payload_ref_to_json(ref: PayloadRef) -> dict:
    if isinstance(ref, CardId):
        return {"type": "card", "cardId": ref.to_json()}
    if isinstance(ref, AccountId):
        return {"type": "account", "uri": ref.uri}
    return {"type": "text", "text": ref}


def payload_ref_from_json(obj: dict) -> PayloadRef:
    kind = obj.get("type")
    if kind == "card":
        return CardId.from_json(obj["cardId"])
    if kind == "account":
        return parse_account_id(obj["uri"])
    return str(obj.get("text", ""))


@dataclass(frozen=True)
class AttentionElement:
    element_id: str
    account: AccountId
    kind: ElementKind
    subject: Subject
    payload_ref: PayloadRef
    created_at: object  # datetime, seconds precision
    state: ElementState
    text: str = ""

    def to_json(self) -> dict:
        return {
            "elementId": self.element_id,
            "account": self.account.uri,
            "kind": self.kind.value,
            "subject": self.subject.value,
            "payloadRef": payload_ref_to_json(self.payload_ref),
            "createdAt": render_timestamp(self.created_at),
            "state": self.state.value,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttentionElement":
        return cls(
            element_id=str(obj["elementId"]),
            account=parse_account_id(obj["account"]),
            kind=ElementKind(obj["kind"]),
            subject=Subject(obj["subject"]),
            payload_ref=payload_ref_from_json(obj["payloadRef"]),
            created_at=parse_timestamp(obj["createdAt"]),
            state=ElementState(obj["state"]),
            text=str(obj.get("text", "")),
        )


@dataclass(frozen=True)
class HistoryRecord:
    element_id: str
    event: str  # added | granted | denied | read
    at: object
    element: AttentionElement | None = None

    def to_json(self) -> dict:
        out = {"elementId": self.element_id, "event": self.event, "at": render_timestamp(self.at)}
        if self.element is not None:
            out["element"] = self.element.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "HistoryRecord":
        element = AttentionElement.from_json(obj["element"]) if "element" in obj else None
        return cls(
            element_id=str(obj["elementId"]),
            event=str(obj["event"]),
            at=parse_timestamp(obj["at"]),
            element=element,
        )


DecisionHandler = Callable[["Txn", "AccountHandle", AttentionElement, str, dict], None]


@dataclass
class Barker:
    """Attention-list service over the per-account store."""

    store: "NodeStore"
    handlers: dict[Subject, DecisionHandler] = field(default_factory=dict)

    def register_handler(self, subject: Subject, handler: DecisionHandler) -> None:
        self.handlers[subject] = handler

    def add_plea(
        self, account: AccountId, subject: Subject, payload_ref: PayloadRef, text: str = ""
    ) -> str:
        handle = self.store.get(account)
        element = AttentionElement(
            element_id=uuid.uuid4().hex,
            account=account,
            kind=ElementKind.PLEA,
            subject=subject,
            payload_ref=payload_ref,
            created_at=now_utc(),
            state=ElementState.PENDING,
            text=text,
        )
        handle.attention_add(element)
        return element.element_id

    def add_notification(
        self, account: AccountId, subject: Subject, text: str, payload_ref: PayloadRef = ""
    ) -> str:
        handle = self.store.get(account)
        element = AttentionElement(
            element_id=uuid.uuid4().hex,
            account=account,
            kind=ElementKind.NOTIFICATION,
            subject=subject,
            payload_ref=payload_ref,
            created_at=now_utc(),
            state=ElementState.UNREAD,
            text=text,
        )
        handle.attention_add(element)
        return element.element_id

    def pending_plea(
        self, account: AccountId, subject: Subject, payload_ref: PayloadRef
    ) -> AttentionElement | None:
        handle = self.store.get(account)
        for element in handle.list_attention():
            if (
                element.kind is ElementKind.PLEA
                and element.state is ElementState.PENDING
                and element.subject is subject
                and element.payload_ref == payload_ref
            ):
                return element
        return None

    def decide(
        self, txn: "Txn", account: AccountId, element_id: str, verdict: str, args: dict | None = None
    ) -> None:
        """Route a human verdict to the owning subsystem, exactly once."""
        if verdict not in ("grant", "deny"):
            raise NotPending(f"verdict must be grant or deny, got {verdict!r}")
        handle = self.store.get(account)
        with handle.lock:
            element = handle.attention_get(element_id)
            if element is None:
                raise UnknownElement(f"no attention element {element_id}")
            if element.kind is not ElementKind.PLEA:
                raise NotAPlea(f"element {element_id} is a notification")
            if element.state is not ElementState.PENDING:
                raise NotPending(f"plea {element_id} already decided: {element.state.value}")
            new_state = ElementState.GRANTED if verdict == "grant" else ElementState.DENIED
            handle.attention_set_state(element_id, new_state)
            handler = self.handlers.get(element.subject)
            if handler is not None:
                handler(txn, handle, element, verdict, args or {})

    def mark_read(self, account: AccountId, element_id: str) -> None:
        handle = self.store.get(account)
        with handle.lock:
            element = handle.attention_get(element_id)
            if element is None:
                raise UnknownElement(f"no attention element {element_id}")
            if element.kind is not ElementKind.NOTIFICATION or element.state is not ElementState.UNREAD:
                raise NotUnread(f"element {element_id} is not an unread notification")
            handle.attention_set_state(element_id, ElementState.READ)

    def list_attention(self, account: AccountId, include_read: bool = False) -> list[AttentionElement]:
        """Default view: pending pleas and unread notifications, creation order."""
        handle = self.store.get(account)
        elements = handle.list_attention()
        if include_read:
            return elements
        return [
            e
            for e in elements
            if e.state in (ElementState.PENDING, ElementState.UNREAD)
        ]

    def history(self, account: AccountId) -> list[HistoryRecord]:
        return self.store.get(account).attention_history()
