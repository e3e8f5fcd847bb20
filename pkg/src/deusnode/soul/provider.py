"""Contribution subsystem: sign exported cards and forward to the concerned person."""

from __future__ import annotations

from typing import TYPE_CHECKING

from ..barker import Subject
from ..cards import DigitalCard, card_to_json, contributor_sign
from ..errors import WrongProvider
from ..transfer import CommandKind, DeliveryReceipt, marshal_body

if TYPE_CHECKING:
    from ..node import DeusNode


class ContributionSoul:
    def __init__(self, node: "DeusNode"):
        self.node = node

    def forward_to_cp(self, account, card: DigitalCard) -> DeliveryReceipt:
        """Sign an exported card and send it to the concerned person's account.

        Fire-and-forward: the provider keeps no copy, only a notice in its
        attention history.
        """
        self.node.store.get(account)  # UnknownAccount if not hosted here
        if card.id.provider != account:
            raise WrongProvider(
                f"card names provider {card.id.provider}, calling account is {account}"
            )
        sk = self.node.sign_key(account)
        signed = contributor_sign(card, sk)
        receipt = self.node.transfer.send_command(
            account,
            signed.id.concerned,
            CommandKind.REPATRIATE_CARD,
            marshal_body(card_to_json(signed)),
        )
        self.node.barker.add_notification(
            account,
            Subject.GENERIC_NOTICE,
            f"contributed '{signed.payload.title}' to {signed.id.concerned}",
            payload_ref=signed.id,
        )
        return receipt
