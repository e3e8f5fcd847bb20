"""Contribution, repatriation, publication, and subscription flows.

All accounts are co-located on one node here, so every exchange runs over
the loopback binding; the HTTP path is exercised by the service and
scenario tests.
"""

import random

import pytest

from deusnode.barker import ElementKind, ElementState, Subject
from deusnode.cards import CardStatus, card_to_json, contributor_sign, verify_card
from deusnode.errors import (
    AlreadySubscribed,
    NoPendingRequest,
    NotASubscriber,
    NotInPif,
    NotStaged,
    NotSubscribed,
    RequestPending,
    SelfSubscription,
    UnknownGroup,
    WrongProvider,
)
from deusnode.identity import parse_account_id
from deusnode.soul import messages
from deusnode.store import AccountMode, StrategyConfig, StrategyKind
from deusnode.transfer import CommandKind, Txn, fresh_envelope, marshal_body

from helpers import ALICE, BOB, CAROL, HIGGINS, AccountSpec, build_node, keys_for, make_card

A = parse_account_id(ALICE)
B = parse_account_id(BOB)
H = parse_account_id(HIGGINS)
C = parse_account_id(CAROL)


@pytest.fixture
def node(tmp_path):
    built = build_node(
        tmp_path,
        [
            AccountSpec(ALICE),
            AccountSpec(BOB),
            AccountSpec(HIGGINS),
            AccountSpec(CAROL),
        ],
    )
    yield built
    built.close()


def pending_pleas(node, account, subject=None):
    return [
        e
        for e in node.barker.list_attention(account)
        if e.kind is ElementKind.PLEA
        and e.state is ElementState.PENDING
        and (subject is None or e.subject is subject)
    ]


def establish(node, consumer, publisher, group="all"):
    node.subscribe(consumer, publisher)
    [plea] = pending_pleas(node, publisher, Subject.SUBSCRIPTION_REQUEST)
    node.decide_attention(publisher, plea.element_id, "grant", {"group": group})


class TestContribution:
    def test_contribution_lands_in_staging_with_plea(self, node):
        receipt = node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        assert receipt.protocol == "loopback"
        staged = node.store.get(A).list_staging()
        assert len(staged) == 1
        assert staged[0].contributor_sig is not None and staged[0].counter_sig is None
        [plea] = pending_pleas(node, A, Subject.REPATRIATION)
        assert plea.payload_ref == staged[0].id

    def test_wrong_provider_rejected(self, node):
        with pytest.raises(WrongProvider):
            node.contribute(H, make_card("visit-1", ALICE, BOB))

    def test_self_contribution_flows_through_repatriation(self, node):
        node.contribute(A, make_card("allergies", ALICE, ALICE))
        assert len(node.store.get(A).list_staging()) == 1
        assert pending_pleas(node, A, Subject.REPATRIATION)

    def test_contribution_never_touches_provider_files(self, node):
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        handle = node.store.get(H)
        assert handle.list_pif() == []
        assert handle.read_dif() == []
        notices = [e for e in node.barker.list_attention(H) if e.kind is ElementKind.NOTIFICATION]
        assert len(notices) == 1

    def test_contribution_is_single_signed_by_caller(self, node):
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        [staged] = node.store.get(A).list_staging()
        report = verify_card(staged, node.registry)
        assert report.overall is CardStatus.SINGLE_SIGNED


class TestRepatriation:
    def test_bad_signature_rejected_with_notice(self, node):
        card = contributor_sign(make_card("forged", HIGGINS, ALICE), keys_for(BOB).sign_key)
        envelope = fresh_envelope(H, A, CommandKind.REPATRIATE_CARD, marshal_body(card_to_json(card)))
        node.receive_envelope(envelope)
        assert node.store.get(A).list_staging() == []
        assert pending_pleas(node, A) == []
        notes = [e for e in node.barker.list_attention(A) if e.kind is ElementKind.NOTIFICATION]
        assert len(notes) == 1 and "rejected" in notes[0].text

    def test_accept_assimilates_and_publishes_to_all(self, node):
        establish(node, B, A)
        establish(node, C, A)
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        [plea] = pending_pleas(node, A, Subject.REPATRIATION)
        node.decide_attention(A, plea.element_id, "grant")
        [pif_card] = node.store.get(A).list_pif()
        assert verify_card(pif_card, node.registry).overall is CardStatus.DOUBLE_SIGNED
        assert node.store.get(B).read_fif(A) == [pif_card]
        assert node.store.get(C).read_fif(A) == [pif_card]
        assert node.store.get(A).list_staging() == []

    def test_accept_with_zero_subscribers(self, node):
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        [plea] = pending_pleas(node, A, Subject.REPATRIATION)
        node.decide_attention(A, plea.element_id, "grant")
        assert len(node.store.get(A).list_pif()) == 1

    def test_decline_cleans_staging_and_notifies_contributor(self, node):
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        [plea] = pending_pleas(node, A, Subject.REPATRIATION)
        node.decide_attention(A, plea.element_id, "deny")
        assert node.store.get(A).list_staging() == []
        assert node.store.get(A).list_pif() == []
        higgins_notes = [
            e for e in node.barker.list_attention(H) if "declined" in e.text
        ]
        assert len(higgins_notes) == 1

    def test_decide_repatriation_direct_api(self, node):
        node.contribute(H, make_card("visit-1", HIGGINS, ALICE))
        [staged] = node.store.get(A).list_staging()
        node.decide_repatriation(A, staged.id, "accept")
        assert len(node.store.get(A).list_pif()) == 1
        # the plea was resolved, not orphaned
        assert pending_pleas(node, A, Subject.REPATRIATION) == []

    def test_decide_unstaged_card(self, node):
        with pytest.raises(NotStaged):
            node.decide_repatriation(A, make_card("ghost", HIGGINS, ALICE).id, "accept")

    def test_redelivered_contribution_collapses_to_one_plea(self, node):
        card = make_card("visit-1", HIGGINS, ALICE)
        signed = contributor_sign(card, keys_for(HIGGINS).sign_key)
        body = marshal_body(card_to_json(signed))
        for _ in range(3):  # three distinct envelopes carrying the same card
            node.receive_envelope(fresh_envelope(H, A, CommandKind.REPATRIATE_CARD, body))
        assert len(node.store.get(A).list_staging()) == 1
        assert len(pending_pleas(node, A, Subject.REPATRIATION)) == 1


class TestVirtualAccount:
    VALA = "https://ids.example/center/vala"

    @pytest.fixture
    def vnode(self, tmp_path):
        built = build_node(
            tmp_path,
            [
                AccountSpec(
                    self.VALA,
                    mode=AccountMode.VIRTUAL_AUTO_ACCEPT,
                    white_list=(HIGGINS,),
                ),
                AccountSpec(BOB),
                AccountSpec(HIGGINS),
                AccountSpec(CAROL),
            ],
        )
        yield built
        built.close()

    def test_white_listed_contribution_auto_accepts_and_publishes_to_all(self, vnode):
        vala = parse_account_id(self.VALA)
        establish(vnode, B, vala, group="team-a")
        establish(vnode, C, vala, group="team-b")
        vnode.contribute(H, make_card("onco-1", HIGGINS, self.VALA))
        [pif_card] = vnode.store.get(vala).list_pif()
        assert verify_card(pif_card, vnode.registry).overall is CardStatus.DOUBLE_SIGNED
        # publish-to-all ignores group selection for virtual accounts
        assert vnode.store.get(B).read_fif(vala) == [pif_card]
        assert vnode.store.get(C).read_fif(vala) == [pif_card]
        assert pending_pleas(vnode, vala) == []

    def test_non_white_listed_contribution_stalls_with_plea(self, vnode):
        vala = parse_account_id(self.VALA)
        card = make_card("note-1", CAROL, self.VALA)
        signed = contributor_sign(card, keys_for(CAROL).sign_key)
        vnode.receive_envelope(
            fresh_envelope(C, vala, CommandKind.REPATRIATE_CARD, marshal_body(card_to_json(signed)))
        )
        assert len(vnode.store.get(vala).list_staging()) == 1
        assert vnode.store.get(vala).list_pif() == []
        assert len(pending_pleas(vnode, vala, Subject.REPATRIATION)) == 1


class TestSubscriptionEstablishment:
    def test_request_raises_plea(self, node):
        node.subscribe(B, A)
        assert len(pending_pleas(node, A, Subject.SUBSCRIPTION_REQUEST)) == 1
        assert node.store.get(B).has_pending_request(A)

    def test_duplicate_requests_collapse(self, node):
        node.subscribe(B, A)
        with pytest.raises(RequestPending):
            node.subscribe(B, A)
        # Hand-deliver a second request envelope: still one plea.
        body = messages.build_request_subscription(B, A, keys_for(BOB).sign_key)
        node.receive_envelope(
            fresh_envelope(B, A, CommandKind.REQUEST_SUBSCRIPTION, marshal_body(body))
        )
        assert len(pending_pleas(node, A, Subject.SUBSCRIPTION_REQUEST)) == 1

    def test_self_subscription_rejected(self, node):
        with pytest.raises(SelfSubscription):
            node.subscribe(A, A)

    def test_grant_completes_both_sides(self, node):
        establish(node, B, A, group="oncology-team")
        assert node.store.get(A).subscribers() == {B: "oncology-team"}
        assert A in node.store.get(B).publishers()
        assert not node.store.get(B).has_pending_request(A)
        notes = [e for e in node.barker.list_attention(B) if "granted" in e.text]
        assert len(notes) == 1

    def test_deny_leaves_no_relationship(self, node):
        node.subscribe(B, A)
        [plea] = pending_pleas(node, A, Subject.SUBSCRIPTION_REQUEST)
        node.decide_attention(A, plea.element_id, "deny")
        assert node.store.get(A).subscribers() == {}
        assert A not in node.store.get(B).publishers()
        assert not node.store.get(B).has_pending_request(A)
        notes = [e for e in node.barker.list_attention(B) if "denied" in e.text]
        assert len(notes) == 1

    def test_already_subscribed_rejected(self, node):
        establish(node, B, A)
        with pytest.raises(AlreadySubscribed):
            node.subscribe(B, A)

    def test_forged_decision_rejected(self, node):
        node.subscribe(B, A)
        forged = messages.build_decision(A, B, "grant", "all", keys_for(CAROL).sign_key)
        envelope = fresh_envelope(A, B, CommandKind.DECISION_SUBSCRIPTION, marshal_body(forged))
        from deusnode.errors import BadSignature

        with pytest.raises(BadSignature):
            node.receive_envelope(envelope)
        assert A not in node.store.get(B).publishers()
        assert node.store.get(B).has_pending_request(A)

    def test_unexpected_decision_rejected(self, node):
        decision = messages.build_decision(A, B, "grant", "all", keys_for(ALICE).sign_key)
        envelope = fresh_envelope(A, B, CommandKind.DECISION_SUBSCRIPTION, marshal_body(decision))
        with pytest.raises(NoPendingRequest):
            node.receive_envelope(envelope)
        assert A not in node.store.get(B).publishers()


def accept_contribution(node, provider, concerned, discriminator, groups=None):
    node.contribute(provider, make_card(discriminator, provider.uri, concerned.uri))
    [staged] = [c for c in node.store.get(concerned).list_staging() if c.id.discriminator == discriminator]
    args = {"groups": groups} if groups is not None else {}
    node.decide_repatriation(concerned, staged.id, "accept", args)
    return node.store.get(concerned).pif_card(staged.id)


class TestSelectAndPublish:
    def test_groups_target_members_only(self, node):
        establish(node, B, A, group="oncology-team")
        establish(node, C, A, group="radiology")
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        report = node.publish(A, card.id, ["oncology-team"])
        assert report.delivered == 1
        assert node.store.get(B).read_fif(A) == [card]
        assert node.store.get(C).read_dif() == []

    def test_publish_all_reaches_every_subscriber(self, node):
        establish(node, B, A, group="oncology-team")
        establish(node, C, A, group="radiology")
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        report = node.publish(A, card.id, None)
        assert report.delivered == 2
        assert node.store.get(B).read_fif(A) == [card]
        assert node.store.get(C).read_fif(A) == [card]

    def test_unknown_group_sends_nothing(self, node):
        establish(node, B, A)
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        with pytest.raises(UnknownGroup):
            node.publish(A, card.id, ["nonexistent"])
        assert node.store.get(B).read_dif() == []

    def test_not_in_pif(self, node):
        with pytest.raises(NotInPif):
            node.publish(A, make_card("ghost", HIGGINS, ALICE).id, None)

    def test_group_log_records_targeted_publishes(self, node):
        establish(node, B, A, group="oncology-team")
        card = accept_contribution(node, H, A, "visit-1", groups=["oncology-team"])
        card2 = accept_contribution(node, H, A, "visit-2", groups=["oncology-team"])
        log = node.store.get(A).group_log("oncology-team")
        assert log == [card.id, card2.id]


class TestInitialPublicationStrategies:
    def fill_pif(self, node, concerned=A, provider=H):
        return [
            accept_contribution(node, provider, concerned, f"hist-{i}", groups=[])
            for i in range(3)
        ]

    def test_nothing_strategy(self, node):
        self.fill_pif(node)
        establish(node, B, A)
        assert node.store.get(B).read_dif() == []

    def test_global_set_strategy(self, tmp_path):
        node = build_node(
            tmp_path,
            [
                AccountSpec(
                    ALICE,
                    strategy=StrategyConfig(
                        kind=StrategyKind.GLOBAL_SET,
                        global_set=(make_card("hist-0", HIGGINS, ALICE).id,
                                    make_card("hist-2", HIGGINS, ALICE).id),
                    ),
                ),
                AccountSpec(BOB),
                AccountSpec(HIGGINS),
            ],
        )
        try:
            cards = self.fill_pif(node)
            establish(node, B, A)
            fif = node.store.get(B).read_fif(A)
            assert {c.id.discriminator for c in fif} == {"hist-0", "hist-2"}
            assert all(c in cards for c in fif)
        finally:
            node.close()

    def test_group_history_strategy(self, tmp_path):
        node = build_node(
            tmp_path,
            [
                AccountSpec(ALICE, strategy=StrategyConfig(kind=StrategyKind.GROUP_HISTORY)),
                AccountSpec(BOB),
                AccountSpec(CAROL),
                AccountSpec(HIGGINS),
            ],
        )
        try:
            establish(node, C, A, group="team")
            first = accept_contribution(node, H, A, "log-1", groups=["team"])
            second = accept_contribution(node, H, A, "log-2", groups=["team"])
            # New member of the same group receives the log, in order.
            establish(node, B, A, group="team")
            fif = node.store.get(B).read_fif(A)
            assert [c.id for c in fif] == sorted([first.id, second.id])
            log = node.store.get(A).group_log("team")
            assert log == [first.id, second.id]
        finally:
            node.close()

    def test_group_history_empty_log(self, tmp_path):
        node = build_node(
            tmp_path,
            [
                AccountSpec(ALICE, strategy=StrategyConfig(kind=StrategyKind.GROUP_HISTORY)),
                AccountSpec(BOB),
                AccountSpec(HIGGINS),
            ],
        )
        try:
            self.fill_pif(node)
            establish(node, B, A, group="fresh-team")
            assert node.store.get(B).read_dif() == []
        finally:
            node.close()

    def test_manual_selection_strategy(self, tmp_path):
        node = build_node(
            tmp_path,
            [
                AccountSpec(ALICE, strategy=StrategyConfig(kind=StrategyKind.MANUAL_SELECTION)),
                AccountSpec(BOB),
                AccountSpec(HIGGINS),
            ],
        )
        try:
            cards = self.fill_pif(node)
            establish(node, B, A)
            assert node.store.get(B).read_dif() == []
            [plea] = pending_pleas(node, A, Subject.MANUAL_SELECTION)
            node.decide_attention(
                A, plea.element_id, "grant", {"cardPicks": [cards[1].id.to_json()]}
            )
            assert node.store.get(B).read_fif(A) == [cards[1]]
        finally:
            node.close()


class TestCancelAndUnsubscribe:
    def test_cancel_without_demand(self, node):
        establish(node, B, A)
        card = accept_contribution(node, H, A, "visit-1")
        node.cancel_subscription(A, B, demand_deletion=False)
        assert node.store.get(A).subscribers() == {}
        assert A not in node.store.get(B).publishers()
        assert node.store.get(B).read_fif(A) == [card]  # FIF deletion not enforced
        assert pending_pleas(node, B, Subject.DELETION_DEMAND) == []

    def test_cancel_with_demand_raises_deletion_plea(self, node):
        establish(node, B, A)
        card = accept_contribution(node, H, A, "visit-1")
        node.cancel_subscription(A, B, demand_deletion=True)
        [plea] = pending_pleas(node, B, Subject.DELETION_DEMAND)
        assert node.store.get(B).read_fif(A) == [card]
        node.decide_attention(B, plea.element_id, "grant")
        from deusnode.errors import UnknownForeignFile

        with pytest.raises(UnknownForeignFile):
            node.store.get(B).read_fif(A)

    def test_deletion_plea_denied_keeps_fif(self, node):
        establish(node, B, A)
        card = accept_contribution(node, H, A, "visit-1")
        node.cancel_subscription(A, B, demand_deletion=True)
        [plea] = pending_pleas(node, B, Subject.DELETION_DEMAND)
        node.decide_attention(B, plea.element_id, "deny")
        assert node.store.get(B).read_fif(A) == [card]

    def test_cancel_unknown_consumer(self, node):
        with pytest.raises(NotASubscriber):
            node.cancel_subscription(A, B, demand_deletion=False)

    def test_unsubscribe_updates_both_sides(self, node):
        establish(node, B, A)
        node.unsubscribe(B, A)
        assert A not in node.store.get(B).publishers()
        assert node.store.get(A).subscribers() == {}

    def test_unsubscribe_with_publisher_demanding_deletion(self, tmp_path):
        node = build_node(
            tmp_path,
            [
                AccountSpec(ALICE, options={"demandDeletionOnUnsubscribe": True}),
                AccountSpec(BOB),
                AccountSpec(HIGGINS),
            ],
        )
        try:
            establish(node, B, A)
            accept_contribution(node, H, A, "visit-1")
            node.unsubscribe(B, A)
            assert len(pending_pleas(node, B, Subject.DELETION_DEMAND)) == 1
        finally:
            node.close()

    def test_unsubscribe_unknown_publisher(self, node):
        with pytest.raises(NotSubscribed):
            node.unsubscribe(B, A)


class TestPublicationGating:
    def test_publication_from_non_confirmed_publisher_dropped(self, node):
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        envelope = fresh_envelope(A, B, CommandKind.PUBLISH_CARD, marshal_body(card_to_json(card)))
        node.receive_envelope(envelope)
        assert node.store.get(B).read_dif() == []
        notes = [e for e in node.barker.list_attention(B) if "non-confirmed" in e.text]
        assert len(notes) == 1

    def test_publication_buffered_while_request_pending(self, node):
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        node.subscribe(B, A)
        envelope = fresh_envelope(A, B, CommandKind.PUBLISH_CARD, marshal_body(card_to_json(card)))
        node.receive_envelope(envelope)
        assert node.store.get(B).read_dif() == []  # buffered, not absorbed
        [plea] = pending_pleas(node, A, Subject.SUBSCRIPTION_REQUEST)
        node.decide_attention(A, plea.element_id, "grant")
        assert node.store.get(B).read_fif(A) == [card]

    def test_buffered_publication_expires(self, node):
        card = accept_contribution(node, H, A, "visit-1", groups=[])
        node.subscribe(B, A)
        node.consumer.buffer_seconds = 0.0
        envelope = fresh_envelope(A, B, CommandKind.PUBLISH_CARD, marshal_body(card_to_json(card)))
        node.receive_envelope(envelope)
        import time

        time.sleep(0.02)
        # Any later publish re-evaluates the buffer.
        second = fresh_envelope(A, B, CommandKind.PUBLISH_CARD, marshal_body(card_to_json(card)))
        node.receive_envelope(second)
        [plea] = pending_pleas(node, A, Subject.SUBSCRIPTION_REQUEST)
        node.decide_attention(A, plea.element_id, "grant")
        fif = node.store.get(B).read_fif(A)
        assert fif == [card]  # the second copy was still buffered; first expired with a notice
        dropped = [e for e in node.barker.list_attention(B) if "dropped buffered" in e.text]
        assert len(dropped) == 1

    def test_fif_bytes_equal_published_bytes(self, node):
        establish(node, B, A)
        card = accept_contribution(node, H, A, "visit-1")
        [stored] = node.store.get(B).read_fif(A)
        assert card_to_json(stored) == card_to_json(card)

    def test_publication_gate_property_random_sequences(self, node):
        # Publication gate: cards only ever reach accounts that were accepted
        # subscribers at publish time; declined cards appear nowhere.
        rng = random.Random(77)
        consumers = [B, C]
        published_to: dict = {B: set(), C: set()}
        declined = set()
        counter = 0
        for _ in range(60):
            op = rng.choice(["grant", "cancel", "contribute-accept", "contribute-decline", "publish"])
            if op == "grant":
                consumer = rng.choice(consumers)
                if consumer not in node.store.get(A).subscribers() and not node.store.get(
                    consumer
                ).has_pending_request(A):
                    try:
                        establish(node, consumer, A)
                    except AlreadySubscribed:
                        pass
            elif op == "cancel":
                consumer = rng.choice(consumers)
                if consumer in node.store.get(A).subscribers():
                    node.cancel_subscription(A, consumer, demand_deletion=False)
            elif op == "contribute-accept":
                counter += 1
                card = accept_contribution(node, H, A, f"c{counter}", groups=None)
                for consumer in node.store.get(A).subscribers():
                    published_to[consumer].add(card.id.key())
            elif op == "contribute-decline":
                counter += 1
                node.contribute(H, make_card(f"c{counter}", HIGGINS, ALICE))
                staged = [
                    c for c in node.store.get(A).list_staging() if c.id.discriminator == f"c{counter}"
                ]
                node.decide_repatriation(A, staged[0].id, "decline")
                declined.add(staged[0].id.key())
            elif op == "publish":
                pif = node.store.get(A).list_pif()
                if pif:
                    card = rng.choice(pif)
                    node.publish(A, card.id, None)
                    for consumer in node.store.get(A).subscribers():
                        published_to[consumer].add(card.id.key())
        for consumer in consumers:
            fif_keys = {c.id.key() for c in node.store.get(consumer).read_dif()}
            assert fif_keys <= published_to[consumer]
            assert fif_keys & declined == set()
        pif_keys = {c.id.key() for c in node.store.get(A).list_pif()}
        assert pif_keys & declined == set()
