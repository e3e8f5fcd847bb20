"""The node: wires store, registry, transfer, Barker, and the Soul subsystems.

One DeusNode hosts many accounts. All Soul operations follow the same
discipline: state mutations run under the owning account's lock and queue
outbound commands into a Txn; the queue is flushed only after the lock is
released, so no thread ever holds two accounts' locks and a crash can never
leave a card published but unrecorded.
"""

from __future__ import annotations

from .barker import Barker, Subject
from .cards import CardId, DigitalCard, card_from_json, card_to_json
from .config import AccountConfig, NodeConfig, load_registry_with_accounts
from .errors import (
    ConfigError,
    DeusError,
    NoSignKey,
    ValidationError,
)
from .identity import AccountId, KeyRegistry, SignKey
from .soul import ConcernedSoul, ConsumerSoul, ContributionSoul
from .store import AccountMode, NodeStore, StrategyConfig
from .transfer import (
    CommandKind,
    MulticastEntry,
    TransferCore,
    Txn,
    marshal_body,
)
from .transfer.bindings import BindingSuite, PeerTable


class DeusNode:
    def __init__(self, config: NodeConfig, registry: KeyRegistry | None = None):
        self.config = config
        self.registry = registry or load_registry_with_accounts(config)
        self.peer_table = PeerTable.from_file(config.peer_table_file)
        self.store = NodeStore(config.data_dir, self.registry, fsync=config.fsync)
        self._sign_keys: dict[AccountId, SignKey] = {}
        self._tokens: dict[str, AccountId] = {}

        self.transfer = TransferCore(is_local=self.store.has_account, retry_policy=config.retry_policy)
        self.bindings = BindingSuite(
            self.transfer,
            self.peer_table,
            is_local=self.store.has_account,
            http_priority=config.http_priority,
            http_timeout=config.http_timeout,
        )
        self.barker = Barker(store=self.store)
        self.contribution = ContributionSoul(self)
        self.concerned = ConcernedSoul(self)
        self.consumer = ConsumerSoul(self)

        self.transfer.account_handle = self.store.get
        self.transfer.flush_outbox = self.flush
        self.transfer.command_handlers = {
            CommandKind.REPATRIATE_CARD: self.concerned.on_repatriate,
            CommandKind.REQUEST_SUBSCRIPTION: self.concerned.on_request_subscription,
            CommandKind.UNSUBSCRIBE: self.concerned.on_unsubscribe,
            CommandKind.DECISION_SUBSCRIPTION: self.consumer.on_decision,
            CommandKind.PUBLISH_CARD: self.consumer.on_publish,
            CommandKind.CANCEL_SUBSCRIPTION: self.consumer.on_cancel,
            CommandKind.NOTICE: self.consumer.on_notice,
        }
        self.barker.register_handler(
            Subject.REPATRIATION, self.concerned.handle_repatriation_decision
        )
        self.barker.register_handler(
            Subject.SUBSCRIPTION_REQUEST, self.concerned.handle_subscription_decision
        )
        self.barker.register_handler(
            Subject.MANUAL_SELECTION, self.concerned.handle_manual_selection_decision
        )
        self.barker.register_handler(
            Subject.DELETION_DEMAND, self.consumer.handle_deletion_decision
        )

        self.store.load_all()
        for entry in config.accounts:
            self._install_account(entry)

    def _install_account(self, entry: AccountConfig) -> None:
        if not self.store.has_account(entry.account):
            self.store.provision_account(
                entry.account, entry.mode, entry.strategy, options=dict(entry.options)
            )
        if entry.sign_key is not None:
            self._sign_keys[entry.account] = entry.sign_key
        self._tokens[entry.token] = entry.account

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def sign_key(self, account: AccountId) -> SignKey:
        key = self._sign_keys.get(account)
        if key is None:
            raise NoSignKey(f"no sign key configured for {account}")
        return key

    def account_for_token(self, token: str) -> AccountId | None:
        return self._tokens.get(token)

    def flush(self, txn: Txn) -> list[MulticastEntry]:
        """Deliver queued commands after the state mutation committed.

        Critical failures propagate; others are reported and leave a notice.
        """
        entries: list[MulticastEntry] = []
        for command in txn.outbox:
            try:
                receipt = self.transfer.send_command(
                    command.sender, command.receiver, command.command, marshal_body(command.body)
                )
                entries.append(
                    MulticastEntry(
                        receiver=command.receiver,
                        ok=True,
                        envelope_id=receipt.envelope_id,
                        protocol=receipt.protocol,
                    )
                )
            except DeusError as exc:
                if command.critical:
                    raise
                entries.append(
                    MulticastEntry(receiver=command.receiver, ok=False, error=exc.reason)
                )
                self.barker.add_notification(
                    command.sender,
                    Subject.GENERIC_NOTICE,
                    f"delivery of {command.command.value} to {command.receiver} failed: {exc.reason}",
                )
        return entries

    @property
    def http_messages_sent(self) -> int:
        return self.bindings.http.messages_sent

    def close(self) -> None:
        self.bindings.close()
        self.store.close()

    # ------------------------------------------------------------------
    # facade used by the NSI layer, the CLI, and the harness
    # ------------------------------------------------------------------

    def contribute(self, account: AccountId, card: DigitalCard):
        return self.contribution.forward_to_cp(account, card)

    def decide_attention(
        self, account: AccountId, element_id: str, verdict: str, args: dict | None = None
    ) -> None:
        txn = Txn()
        self.barker.decide(txn, account, element_id, verdict, args)
        self.flush(txn)

    def decide_repatriation(
        self, account: AccountId, card_id: CardId, verdict: str, args: dict | None = None
    ) -> None:
        txn = Txn()
        self.concerned.decide_repatriation(txn, account, card_id, verdict, args)
        self.flush(txn)

    def subscribe(self, account: AccountId, publisher: AccountId):
        return self.consumer.subscribe(account, publisher)

    def unsubscribe(self, account: AccountId, publisher: AccountId) -> None:
        self.consumer.unsubscribe(account, publisher)

    def cancel_subscription(
        self, account: AccountId, consumer: AccountId, demand_deletion: bool
    ) -> None:
        self.concerned.cancel_subscription(account, consumer, demand_deletion)

    def publish(self, account: AccountId, card_id: CardId, groups: list[str] | None):
        return self.concerned.select_and_publish(account, card_id, groups)

    def receive_envelope(self, envelope) -> None:
        self.transfer.receive_message(envelope)

    # -- state export / restore --

    def export_account(self, account: AccountId) -> dict:
        handle = self.store.get(account)
        with handle.lock:
            return {
                "account": account.uri,
                "metadata": {
                    "mode": handle.mode().value,
                    "strategy": handle.strategy().to_json(),
                    "relationships": {
                        "confirmedPublishers": sorted(p.uri for p in handle.publishers()),
                        "acceptedSubscribers": {
                            a.uri: g for a, g in sorted(handle.subscribers().items())
                        },
                    },
                    "groups": {
                        g: sorted(m.uri for m in members)
                        for g, members in sorted(handle.groups_view().items())
                    },
                },
                "cards": {
                    "staging": [card_to_json(c) for c in handle.list_staging()],
                    "pif": [card_to_json(c) for c in handle.list_pif()],
                    "fifs": {
                        concerned.uri: [card_to_json(c) for c in handle.read_fif(concerned)]
                        for concerned in handle.foreign_file_ids()
                    },
                },
            }

    def import_account(self, account: AccountId, bundle: dict) -> dict:
        from .identity import parse_account_id

        handle = self.store.get(account)
        if bundle.get("account") != account.uri:
            raise ValidationError(
                f"bundle is for {bundle.get('account')}, not {account.uri}", field="account"
            )
        metadata = bundle.get("metadata", {})
        if metadata.get("mode") and metadata["mode"] != handle.mode().value:
            raise ValidationError("bundle mode differs from the provisioned mode", field="mode")
        counts = {"staging": 0, "pif": 0, "fif": 0, "relationships": 0}
        cards = bundle.get("cards", {})
        with handle.lock:
            relationships = metadata.get("relationships", {})
            for uri, group in relationships.get("acceptedSubscribers", {}).items():
                handle.mutate_relationships("add-subscriber", parse_account_id(uri), group=group)
                counts["relationships"] += 1
            for uri in relationships.get("confirmedPublishers", []):
                handle.mutate_relationships("add-publisher", parse_account_id(uri))
                counts["relationships"] += 1
            for obj in cards.get("pif", []):
                handle.restore_pif_card(card_from_json(obj), self.registry)
                counts["pif"] += 1
            for obj in cards.get("staging", []):
                handle.stage_card(card_from_json(obj))
                counts["staging"] += 1
            for fif_cards in cards.get("fifs", {}).values():
                for obj in fif_cards:
                    handle.absorb_into_fif(card_from_json(obj), self.registry)
                    counts["fif"] += 1
        return counts

    # -- dynamic provisioning (admin surface backing the CLI) --

    def provision_account_dynamic(
        self,
        account: AccountId,
        mode: AccountMode,
        strategy: StrategyConfig,
        token: str,
        sign_key: SignKey | None = None,
        options: dict | None = None,
    ) -> None:
        opts = dict(options or {})
        opts.setdefault("publishToAll", mode is AccountMode.VIRTUAL_AUTO_ACCEPT)
        self.store.provision_account(account, mode, strategy, options=opts)
        if sign_key is not None:
            from .identity import keypair_from_seed

            derived = keypair_from_seed(sign_key.data).verify_key
            if self.registry.knows(account):
                if self.registry.verify_key(account) != derived:
                    raise ConfigError(f"{account}: sign key does not match the registered key")
            else:
                self.registry.register(account, derived)
            self._sign_keys[account] = sign_key
        self._tokens[token] = account
