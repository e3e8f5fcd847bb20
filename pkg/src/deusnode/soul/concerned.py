"""Repatriation Hub, PIF-Governing, and Publication subsystems.

Receives contributions, mediates the accept/decline decision (auto-accepting
for white-listed contributors on virtual accounts), counter-signs accepted
cards into the PIF, and publishes double-signed cards to accepted
subscribers. Also owns the publisher side of connection management:
subscription requests, grant/deny decisions, initial publication strategies,
and cancellation.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from ..barker import Subject
from ..cards import CardId, CardStatus, DigitalCard, card_from_json, card_to_json, counter_sign, verify_card
from ..errors import (
    BadSignature,
    ConflictingCardId,
    DeusError,
    MalformedEnvelope,
    NotASubscriber,
    NotInPif,
    NotStaged,
    SelfSubscription,
    UnknownAccount,
    UnknownGroup,
    UnknownPlea,
    ValidationError,
)
from ..identity import AccountId
from ..store import DEFAULT_GROUP, AccountHandle, AccountMode, StrategyConfig, StrategyKind
from ..transfer import CommandKind, Envelope, MulticastReport, Txn, unmarshal_body
from . import messages

if TYPE_CHECKING:
    from ..node import DeusNode

ACCEPT = "accept"
DECLINE = "decline"


class ConcernedSoul:
    def __init__(self, node: "DeusNode"):
        self.node = node

    # ------------------------------------------------------------------
    # repatriation
    # ------------------------------------------------------------------

    def on_repatriate(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        """Accept a contributed card: stage it and raise a plea, or auto-accept."""
        card = card_from_json(unmarshal_body(envelope.payload))
        handle = self.node.store.get(account)
        rejection = self._rejection_reason(account, card)
        if rejection is not None:
            self.node.barker.add_notification(
                account,
                Subject.GENERIC_NOTICE,
                f"rejected contribution '{card.payload.title}' from {card.id.provider}: {rejection}",
                payload_ref=card.id,
            )
            return
        try:
            handle.stage_card(card)
        except ConflictingCardId as exc:
            self.node.barker.add_notification(
                account, Subject.GENERIC_NOTICE,
                f"rejected conflicting contribution for {card.id.key()}: {exc.reason}",
                payload_ref=card.id,
            )
            return
        if handle.staged(card.id) is None:
            # Identical content already assimilated; nothing left to decide.
            return
        auto = (
            handle.mode() is AccountMode.VIRTUAL_AUTO_ACCEPT
            and self.node.registry.is_white_listed(account, card.id.provider)
        )
        if auto:
            self._complete_repatriation(txn, handle, card.id, ACCEPT, {})
            return
        if self.node.barker.pending_plea(account, Subject.REPATRIATION, card.id) is None:
            self.node.barker.add_plea(
                account,
                Subject.REPATRIATION,
                card.id,
                text=f"{card.id.provider} contributed '{card.payload.title}'",
            )

    def _rejection_reason(self, account: AccountId, card: DigitalCard) -> str | None:
        if card.id.concerned != account:
            return f"card concerns {card.id.concerned}"
        if card.contributor_sig is None or card.counter_sig is not None:
            return "card is not exactly single-signed"
        try:
            report = verify_card(card, self.node.registry)
        except UnknownAccount as exc:
            return exc.reason
        if report.overall is not CardStatus.SINGLE_SIGNED:
            return f"contributor signature does not verify ({report.overall.value})"
        return None

    def decide_repatriation(
        self, txn: Txn, account: AccountId, card_id: CardId, verdict: str, args: dict | None = None
    ) -> None:
        """Route the staged card's decision, resolving any pending plea."""
        if verdict not in (ACCEPT, DECLINE):
            raise ValidationError(f"verdict must be accept or decline, got {verdict!r}")
        handle = self.node.store.get(account)
        with handle.lock:
            if handle.staged(card_id) is None:
                raise NotStaged(f"card {card_id.key()} is not staged")
            plea = self.node.barker.pending_plea(account, Subject.REPATRIATION, card_id)
            if plea is not None:
                barker_verdict = "grant" if verdict == ACCEPT else "deny"
                self.node.barker.decide(txn, account, plea.element_id, barker_verdict, args or {})
            else:
                self._complete_repatriation(txn, handle, card_id, verdict, args or {})

    def handle_repatriation_decision(
        self, txn: Txn, handle: AccountHandle, element, verdict: str, args: dict
    ) -> None:
        card_id = element.payload_ref
        self._complete_repatriation(
            txn, handle, card_id, ACCEPT if verdict == "grant" else DECLINE, args
        )

    def _complete_repatriation(
        self, txn: Txn, handle: AccountHandle, card_id: CardId, verdict: str, args: dict
    ) -> None:
        account = handle.account
        staged = handle.staged(card_id)
        if staged is None:
            raise NotStaged(f"card {card_id.key()} is not staged")
        if verdict == ACCEPT:
            sk = self.node.sign_key(account)
            signed = handle.assimilate(card_id, lambda card: counter_sign(card, sk))
            groups = args.get("groups")  # None means every accepted subscriber
            self._queue_publication(txn, handle, signed, groups)
        else:
            handle.discard_staged(card_id, note=f"declined contribution '{staged.payload.title}'")
            txn.queue(
                account,
                card_id.provider,
                CommandKind.NOTICE,
                messages.build_notice(
                    account,
                    kind="repatriation-declined",
                    text=f"{account} declined '{staged.payload.title}'",
                    card_id=card_id.to_json(),
                ),
            )

    # ------------------------------------------------------------------
    # publication
    # ------------------------------------------------------------------

    def _publication_targets(
        self, handle: AccountHandle, groups: list[str] | None
    ) -> tuple[set[AccountId], list[str]]:
        """Resolve target subscribers and the group logs to append."""
        subscribers = handle.subscribers()
        view = handle.groups_view()
        publish_to_all = bool(handle.option("publishToAll", False))
        if groups is None or publish_to_all:
            return set(subscribers), sorted(view)
        targets: set[AccountId] = set()
        for group in groups:
            if group not in view:
                raise UnknownGroup(f"no publication group {group!r}")
            targets |= view[group]
        return targets, list(groups)

    def _queue_publication(
        self, txn: Txn, handle: AccountHandle, card: DigitalCard, groups: list[str] | None
    ) -> None:
        targets, logged_groups = self._publication_targets(handle, groups)
        for group in logged_groups:
            handle.append_group_log(group, card.id)
        body = card_to_json(card)
        for subscriber in sorted(targets):
            txn.queue(handle.account, subscriber, CommandKind.PUBLISH_CARD, body)

    def select_and_publish(
        self, account: AccountId, card_id: CardId, groups: list[str] | None
    ) -> MulticastReport:
        """Multicast a PIF card to the named groups (or everyone)."""
        handle = self.node.store.get(account)
        txn = Txn()
        with handle.lock:
            card = handle.pif_card(card_id)
            if card is None:
                raise NotInPif(f"card {card_id.key()} is not in the PIF")
            self._queue_publication(txn, handle, card, groups)
        entries = self.node.flush(txn)
        return MulticastReport(entries=tuple(entries))

    # ------------------------------------------------------------------
    # subscription management (publisher side)
    # ------------------------------------------------------------------

    def on_request_subscription(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        body = unmarshal_body(envelope.payload)
        try:
            requester = messages.verify_request_subscription(body, account, self.node.registry)
        except (BadSignature, UnknownAccount, MalformedEnvelope) as exc:
            self.node.barker.add_notification(
                account, Subject.GENERIC_NOTICE,
                f"dropped unverifiable subscription request: {exc.reason}",
            )
            return
        if requester == account:
            raise SelfSubscription(f"{account} cannot subscribe to itself")
        handle = self.node.store.get(account)
        if requester in handle.subscribers():
            self.node.barker.add_notification(
                account, Subject.GENERIC_NOTICE,
                f"{requester} requested a subscription but is already accepted",
            )
            return
        if self.node.barker.pending_plea(account, Subject.SUBSCRIPTION_REQUEST, requester) is None:
            self.node.barker.add_plea(
                account,
                Subject.SUBSCRIPTION_REQUEST,
                requester,
                text=f"{requester} requests a subscription",
            )

    def decide_subscription(
        self, txn: Txn, account: AccountId, plea_id: str, verdict: str, group: str | None = None
    ) -> None:
        element = self.node.store.get(account).attention_get(plea_id)
        if element is None or element.subject is not Subject.SUBSCRIPTION_REQUEST:
            raise UnknownPlea(f"no subscription plea {plea_id}")
        self.node.barker.decide(txn, account, plea_id, verdict, {"group": group} if group else {})

    def handle_subscription_decision(
        self, txn: Txn, handle: AccountHandle, element, verdict: str, args: dict
    ) -> None:
        account = handle.account
        requester = element.payload_ref
        sk = self.node.sign_key(account)
        if verdict == "grant":
            group = args.get("group") or DEFAULT_GROUP
            handle.mutate_relationships("add-subscriber", requester, group=group)
            txn.queue(
                account,
                requester,
                CommandKind.DECISION_SUBSCRIPTION,
                messages.build_decision(account, requester, messages.GRANT, group, sk),
            )
            self._queue_initial_publication(txn, handle, requester, group)
        else:
            txn.queue(
                account,
                requester,
                CommandKind.DECISION_SUBSCRIPTION,
                messages.build_decision(account, requester, messages.DENY, "", sk),
            )

    # ------------------------------------------------------------------
    # initial publication strategies
    # ------------------------------------------------------------------

    def _queue_initial_publication(
        self, txn: Txn, handle: AccountHandle, new_subscriber: AccountId, group: str
    ) -> None:
        strategy = handle.strategy()
        account = handle.account
        if strategy.kind is StrategyKind.NOTHING:
            return
        if strategy.kind is StrategyKind.GLOBAL_SET:
            for card_id in strategy.global_set:
                card = handle.pif_card(card_id)
                if card is None:
                    self.node.barker.add_notification(
                        account, Subject.GENERIC_NOTICE,
                        f"initial publication skipped {card_id.key()}: not in PIF",
                        payload_ref=card_id,
                    )
                    continue
                txn.queue(account, new_subscriber, CommandKind.PUBLISH_CARD, card_to_json(card))
            return
        if strategy.kind is StrategyKind.GROUP_HISTORY:
            for card_id in handle.group_log(group):
                card = handle.pif_card(card_id)
                if card is not None:
                    txn.queue(account, new_subscriber, CommandKind.PUBLISH_CARD, card_to_json(card))
            return
        if strategy.kind is StrategyKind.MANUAL_SELECTION:
            self.node.barker.add_plea(
                account,
                Subject.MANUAL_SELECTION,
                new_subscriber,
                text=f"pick cards to initially publish to {new_subscriber}",
            )

    def initial_publish(self, account: AccountId, new_subscriber: AccountId) -> MulticastReport:
        """Replay the initial-publication strategy for a just-granted subscriber."""
        handle = self.node.store.get(account)
        txn = Txn()
        with handle.lock:
            subscribers = handle.subscribers()
            if new_subscriber not in subscribers:
                raise NotASubscriber(f"{new_subscriber} is not an accepted subscriber")
            self._queue_initial_publication(txn, handle, new_subscriber, subscribers[new_subscriber])
        entries = self.node.flush(txn)
        return MulticastReport(entries=tuple(entries))

    def handle_manual_selection_decision(
        self, txn: Txn, handle: AccountHandle, element, verdict: str, args: dict
    ) -> None:
        if verdict != "grant":
            return
        subscriber = element.payload_ref
        account = handle.account
        for pick in args.get("cardPicks", []):
            card_id = pick if isinstance(pick, CardId) else CardId.from_json(pick)
            card = handle.pif_card(card_id)
            if card is None:
                raise NotInPif(f"manual pick {card_id.key()} is not in the PIF")
            txn.queue(account, subscriber, CommandKind.PUBLISH_CARD, card_to_json(card))

    # ------------------------------------------------------------------
    # cancellation / unsubscribe (publisher side)
    # ------------------------------------------------------------------

    def cancel_subscription(
        self, account: AccountId, consumer: AccountId, demand_deletion: bool
    ) -> None:
        handle = self.node.store.get(account)
        txn = Txn()
        with handle.lock:
            if consumer not in handle.subscribers():
                raise NotASubscriber(f"{consumer} is not an accepted subscriber")
            handle.mutate_relationships("remove-subscriber", consumer)
            txn.queue(
                account,
                consumer,
                CommandKind.CANCEL_SUBSCRIPTION,
                messages.build_cancel(account, demand_deletion),
            )
        self.node.flush(txn)

    def on_unsubscribe(self, txn: Txn, account: AccountId, envelope: Envelope) -> None:
        consumer = messages.parse_unsubscribe(unmarshal_body(envelope.payload))
        handle = self.node.store.get(account)
        if consumer not in handle.subscribers():
            return  # already gone; unsubscribe is idempotent
        handle.mutate_relationships("remove-subscriber", consumer)
        demand = bool(handle.option("demandDeletionOnUnsubscribe", False))
        self.node.barker.add_notification(
            account, Subject.GENERIC_NOTICE, f"{consumer} unsubscribed", payload_ref=consumer
        )
        txn.queue(
            account,
            consumer,
            CommandKind.NOTICE,
            messages.build_notice(
                account,
                kind="unsubscribed",
                text=f"{account} acknowledged the unsubscribe",
                demand_deletion=demand,
            ),
        )
