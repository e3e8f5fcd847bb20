"""Subscription and DIF-Governing subsystems (consumer side).

Initiates subscriptions, completes the establishment handshake, absorbs
publications into foreign information files, and exposes read access over
them. Publications that arrive while the grant decision is still in flight
are buffered briefly and re-evaluated, then dropped with a notice.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from ..barker import Subject
from ..cards import DigitalCard, card_from_json
from ..errors import (
    AlreadySubscribed,
    ConflictingCardId,
    DeliveryFailed,
    NoPendingRequest,
    NotSubscribed,
    RequestPending,
    SelfSubscription,
    UnknownForeignFile,
    VerificationFailed,
)
from ..identity import AccountId
from ..store import AccountHandle
from ..transfer import CommandKind, DeliveryReceipt, Envelope, Txn, unmarshal_body
from . import messages

if TYPE_CHECKING:
    from ..node import DeusNode

PENDING_PUBLICATION_BUFFER_SECONDS = 60.0


class ConsumerSoul:
    def __init__(self, node: "DeusNode"):
        self.node = node
        self.buffer_seconds = PENDING_PUBLICATION_BUFFER_SECONDS

    # ------------------------------------------------------------------
    # establishment
    # ------------------------------------------------------------------

    def subscribe(self, account: AccountId, publisher: AccountId) -> DeliveryReceipt:
        handle = self.node.store.get(account)
        if publisher == account:
            raise SelfSubscription(f"{account} cannot subscribe to itself")
        sk = self.node.sign_key(account)
        txn = Txn()
        with handle.lock:
            if publisher in handle.publishers():
                raise AlreadySubscribed(f"{publisher} is already a confirmed publisher")
            if handle.has_pending_request(publisher):
                raise RequestPending(f"a request to {publisher} is already pending")
            handle.add_pending_request(publisher)
            txn.queue(
                account,
                publisher,
                CommandKind.REQUEST_SUBSCRIPTION,
                messages.build_request_subscription(account, publisher, sk),
                critical=True,
            )
        try:
            entries = self.node.flush(txn)
        except DeliveryFailed:
            handle.remove_pending_request(publisher)
            raise
        entry = entries[0]
        return DeliveryReceipt(envelope_id=entry.envelope_id, protocol=entry.protocol)

    def on_decision(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        body = unmarshal_body(envelope.payload)
        publisher, requester, verdict, group = messages.verify_decision(body, self.node.registry)
        if requester != account:
            raise NoPendingRequest(f"decision addressed to {requester}, not {account}")
        handle = self.node.store.get(account)
        if not handle.has_pending_request(publisher):
            raise NoPendingRequest(f"no pending request to {publisher}")
        handle.remove_pending_request(publisher)
        if verdict == messages.GRANT:
            handle.mutate_relationships("add-publisher", publisher)
            self.node.barker.add_notification(
                account,
                Subject.GENERIC_NOTICE,
                f"{publisher} granted the subscription (group {group!r})",
                payload_ref=publisher,
            )
            for card in handle.pop_buffered(publisher):
                self._absorb(handle, card)
        else:
            self.node.barker.add_notification(
                account,
                Subject.GENERIC_NOTICE,
                f"{publisher} denied the subscription",
                payload_ref=publisher,
            )

    # ------------------------------------------------------------------
    # publications
    # ------------------------------------------------------------------

    def on_publish(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        card = card_from_json(unmarshal_body(envelope.payload))
        publisher = card.id.concerned
        handle = self.node.store.get(account)
        self._expire_buffered(handle)
        if publisher in handle.publishers():
            self._absorb(handle, card)
            return
        if handle.has_pending_request(publisher):
            # Grant decision still in flight; keep the card briefly.
            handle.buffer_publication(card)
            return
        self.node.barker.add_notification(
            account,
            Subject.GENERIC_NOTICE,
            f"dropped publication from non-confirmed publisher {publisher}",
            payload_ref=card.id,
        )

    def _absorb(self, handle: AccountHandle, card: DigitalCard) -> None:
        handle.absorb_into_fif(card, self.node.registry)

    def _expire_buffered(self, handle: AccountHandle) -> None:
        for card in handle.expire_buffered(self.buffer_seconds):
            self.node.barker.add_notification(
                handle.account,
                Subject.GENERIC_NOTICE,
                f"dropped buffered publication {card.id.key()}: grant never arrived",
                payload_ref=card.id,
            )

    # ------------------------------------------------------------------
    # teardown
    # ------------------------------------------------------------------

    def unsubscribe(self, account: AccountId, publisher: AccountId) -> None:
        handle = self.node.store.get(account)
        txn = Txn()
        with handle.lock:
            if publisher not in handle.publishers():
                raise NotSubscribed(f"{publisher} is not a confirmed publisher")
            handle.mutate_relationships("remove-publisher", publisher)
            txn.queue(
                account,
                publisher,
                CommandKind.UNSUBSCRIBE,
                messages.build_unsubscribe(account),
            )
        self.node.flush(txn)

    def on_cancel(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        publisher, demand_deletion = messages.parse_cancel(unmarshal_body(envelope.payload))
        handle = self.node.store.get(account)
        if publisher in handle.publishers():
            handle.mutate_relationships("remove-publisher", publisher)
        if demand_deletion:
            if self.node.barker.pending_plea(account, Subject.DELETION_DEMAND, publisher) is None:
                self.node.barker.add_plea(
                    account,
                    Subject.DELETION_DEMAND,
                    publisher,
                    text=f"{publisher} cancelled the subscription and demands deletion of their file",
                )
        else:
            self.node.barker.add_notification(
                account,
                Subject.GENERIC_NOTICE,
                f"{publisher} cancelled the subscription",
                payload_ref=publisher,
            )

    def on_notice(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        sender, kind, text, demand_deletion = messages.parse_notice(unmarshal_body(envelope.payload))
        if demand_deletion:
            if self.node.barker.pending_plea(account, Subject.DELETION_DEMAND, sender) is None:
                self.node.barker.add_plea(
                    account,
                    Subject.DELETION_DEMAND,
                    sender,
                    text=text or f"{sender} demands deletion of their foreign file",
                )
            return
        self.node.barker.add_notification(account, Subject.GENERIC_NOTICE, text, payload_ref=sender)

    def handle_deletion_decision(
        self, txn: Txn, handle: AccountHandle, element, verdict: str, args: dict
    ) -> None:
        if verdict != "grant":
            return
        concerned = element.payload_ref
        try:
            handle.delete_fif(concerned)
        except UnknownForeignFile:
            pass  # nothing stored for that person; demand satisfied vacuously

    # ------------------------------------------------------------------
    # reads
    # ------------------------------------------------------------------

    def read_dif(self, account: AccountId) -> list[DigitalCard]:
        return self.node.store.get(account).read_dif()

    def read_fif(self, account: AccountId, concerned: AccountId) -> list[DigitalCard]:
        return self.node.store.get(account).read_fif(concerned)
