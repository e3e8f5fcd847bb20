"""Multi-tenant persistence for per-account state.

Each account gets its own directory holding a single append-only journal.
A mutation validates against the in-memory state, persists all its events as
one JSON line (flushed, optionally fsynced) and only then applies them, so an
acknowledged mutation is replayable after a crash and a torn final line is
simply an unacknowledged one. Compaction rewrites the journal as a single
snapshot line via atomic rename.

All mutations for one account are serialized by its re-entrant lock;
cross-account operations never hold two accounts' locks simultaneously.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .barker import AttentionElement, ElementKind, ElementState, HistoryRecord, Subject
from .cards import (
    CardId,
    CardStatus,
    DigitalCard,
    card_from_json,
    card_to_json,
    canonical_bytes,
    now_utc,
    parse_timestamp,
    render_timestamp,
    verify_card,
)
from .errors import (
    ConfigError,
    ConflictingCardId,
    DuplicateAccount,
    NotStaged,
    NotSigned,
    UnknownAccount,
    UnknownAccountId,
    UnknownForeignFile,
    ValidationError,
    VerificationFailed,
    WrongConcernedPerson,
)
from .identity import AccountId, KeyRegistry, parse_account_id

CardKey = tuple[str, str, str]

SEEN_RETENTION_SECONDS = 30 * 24 * 3600
COMPACT_THRESHOLD = 4096
DEFAULT_GROUP = "all"


class AccountMode(str, Enum):
    INTERACTIVE = "interactive"
    VIRTUAL_AUTO_ACCEPT = "virtual-auto-accept"


class StrategyKind(str, Enum):
    GLOBAL_SET = "global-set"
    MANUAL_SELECTION = "manual-selection"
    GROUP_HISTORY = "group-history"
    NOTHING = "nothing"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind
    global_set: tuple[CardId, ...] = ()

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.global_set:
            out["globalSet"] = [cid.to_json() for cid in self.global_set]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "StrategyConfig":
        try:
            kind = StrategyKind(obj["kind"])
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"bad strategy: {exc}", field="strategy") from exc
        global_set = tuple(CardId.from_json(c) for c in obj.get("globalSet", []))
        return cls(kind=kind, global_set=global_set)


@dataclass
class BufferedPublication:
    card: DigitalCard
    received_at: float  # epoch seconds


@dataclass
class AccountState:
    """In-memory image of one account, rebuilt from the journal on load."""

    account: AccountId
    mode: AccountMode
    strategy: StrategyConfig
    options: dict = field(default_factory=dict)
    staging: dict[CardKey, DigitalCard] = field(default_factory=dict)
    pif: dict[CardKey, DigitalCard] = field(default_factory=dict)
    confirmed_publishers: set[AccountId] = field(default_factory=set)
    accepted_subscribers: dict[AccountId, str] = field(default_factory=dict)
    groups: dict[str, set[AccountId]] = field(default_factory=lambda: {DEFAULT_GROUP: set()})
    group_logs: dict[str, list[CardId]] = field(default_factory=dict)
    attention: dict[str, AttentionElement] = field(default_factory=dict)
    attention_order: list[str] = field(default_factory=list)
    history: list[HistoryRecord] = field(default_factory=list)
    pending_requests: dict[AccountId, float] = field(default_factory=dict)
    buffered: list[BufferedPublication] = field(default_factory=list)
    foreign_files: dict[AccountId, dict[CardKey, DigitalCard]] = field(default_factory=dict)
    seen_envelopes: dict[str, float] = field(default_factory=dict)


def _serialize_card(card: DigitalCard) -> str:
    return json.dumps(card_to_json(card), sort_keys=True)


def _state_to_json(state: AccountState) -> dict:
    return {
        "account": state.account.uri,
        "mode": state.mode.value,
        "strategy": state.strategy.to_json(),
        "options": state.options,
        "staging": [card_to_json(c) for _, c in sorted(state.staging.items())],
        "pif": [card_to_json(c) for _, c in sorted(state.pif.items())],
        "confirmedPublishers": sorted(p.uri for p in state.confirmed_publishers),
        "acceptedSubscribers": {a.uri: g for a, g in sorted(state.accepted_subscribers.items())},
        "groups": {g: sorted(m.uri for m in members) for g, members in sorted(state.groups.items())},
        "groupLogs": {g: [c.to_json() for c in log] for g, log in sorted(state.group_logs.items())},
        "attention": [state.attention[eid].to_json() for eid in state.attention_order],
        "history": [h.to_json() for h in state.history],
        "pendingRequests": {a.uri: at for a, at in sorted(state.pending_requests.items())},
        "buffered": [
            {"card": card_to_json(b.card), "at": b.received_at} for b in state.buffered
        ],
        "foreignFiles": {
            concerned.uri: [card_to_json(c) for _, c in sorted(cards.items())]
            for concerned, cards in sorted(state.foreign_files.items())
        },
        "seenEnvelopes": dict(sorted(state.seen_envelopes.items())),
    }


def _state_from_json(obj: dict) -> AccountState:
    state = AccountState(
        account=parse_account_id(obj["account"]),
        mode=AccountMode(obj["mode"]),
        strategy=StrategyConfig.from_json(obj["strategy"]),
        options=dict(obj.get("options", {})),
    )
    for c in obj.get("staging", []):
        card = card_from_json(c)
        state.staging[card.id.key()] = card
    for c in obj.get("pif", []):
        card = card_from_json(c)
        state.pif[card.id.key()] = card
    state.confirmed_publishers = {parse_account_id(u) for u in obj.get("confirmedPublishers", [])}
    state.accepted_subscribers = {
        parse_account_id(u): g for u, g in obj.get("acceptedSubscribers", {}).items()
    }
    state.groups = {
        g: {parse_account_id(u) for u in members} for g, members in obj.get("groups", {}).items()
    }
    state.groups.setdefault(DEFAULT_GROUP, set())
    state.group_logs = {
        g: [CardId.from_json(c) for c in log] for g, log in obj.get("groupLogs", {}).items()
    }
    for e in obj.get("attention", []):
        element = AttentionElement.from_json(e)
        state.attention[element.element_id] = element
        state.attention_order.append(element.element_id)
    state.history = [HistoryRecord.from_json(h) for h in obj.get("history", [])]
    state.pending_requests = {
        parse_account_id(u): float(at) for u, at in obj.get("pendingRequests", {}).items()
    }
    state.buffered = [
        BufferedPublication(card=card_from_json(b["card"]), received_at=float(b["at"]))
        for b in obj.get("buffered", [])
    ]
    state.foreign_files = {
        parse_account_id(u): {card_from_json(c).id.key(): card_from_json(c) for c in cards}
        for u, cards in obj.get("foreignFiles", {}).items()
    }
    state.seen_envelopes = {k: float(v) for k, v in obj.get("seenEnvelopes", {}).items()}
    return state


class AccountHandle:
    """Serialized access to one account's state and journal."""

    def __init__(self, store: "NodeStore", directory: Path):
        self.store = store
        self.directory = directory
        self.lock = threading.RLock()
        self.state: AccountState | None = None
        self._seq = 0
        self._journal_path = directory / "journal.jsonl"
        self._file = None
        self._line_count = 0

    @property
    def account(self) -> AccountId:
        assert self.state is not None
        return self.state.account

    # -- journal machinery --

    def _open_journal(self):
        if self._file is None:
            self._file = open(self._journal_path, "ab")

    def _commit(self, events: list[tuple[str, dict]]) -> None:
        """Persist all events as one journal line, then apply them in order."""
        self._open_journal()
        self._seq += 1
        line = json.dumps(
            {"seq": self._seq, "events": [{"op": op, "data": data} for op, data in events]},
            sort_keys=True,
        )
        self._file.write((line + "\n").encode("utf-8"))
        self._file.flush()
        if self.store.fsync:
            os.fsync(self._file.fileno())
        self._line_count += 1
        for op, data in events:
            self._apply(op, data)
        if self._line_count >= COMPACT_THRESHOLD:
            self.compact()

    def _apply(self, op: str, data: dict) -> None:
        state = self.state
        if op == "provision":
            self.state = AccountState(
                account=parse_account_id(data["account"]),
                mode=AccountMode(data["mode"]),
                strategy=StrategyConfig.from_json(data["strategy"]),
                options=dict(data.get("options", {})),
            )
            return
        if op == "snapshot":
            self.state = _state_from_json(data)
            return
        assert state is not None, f"journal op {op!r} before provision"
        if op == "stage-card":
            card = card_from_json(data["card"])
            state.staging[card.id.key()] = card
        elif op == "remove-staged":
            state.staging.pop(tuple(data["key"]), None)
        elif op == "assimilate":
            card = card_from_json(data["card"])
            state.staging.pop(card.id.key(), None)
            state.pif[card.id.key()] = card
        elif op == "rel":
            self._apply_rel(state, data)
        elif op == "fif-put":
            card = card_from_json(data["card"])
            state.foreign_files.setdefault(card.id.concerned, {})[card.id.key()] = card
        elif op == "fif-delete":
            state.foreign_files.pop(parse_account_id(data["concerned"]), None)
        elif op == "group-log-append":
            state.group_logs.setdefault(data["group"], []).append(CardId.from_json(data["cardId"]))
        elif op == "attention-add":
            element = AttentionElement.from_json(data["element"])
            state.attention[element.element_id] = element
            state.attention_order.append(element.element_id)
            state.history.append(
                HistoryRecord(element.element_id, "added", element.created_at, element)
            )
        elif op == "attention-state":
            element = state.attention[data["elementId"]]
            new_state = ElementState(data["state"])
            updated = AttentionElement(
                element_id=element.element_id,
                account=element.account,
                kind=element.kind,
                subject=element.subject,
                payload_ref=element.payload_ref,
                created_at=element.created_at,
                state=new_state,
                text=element.text,
            )
            state.attention[element.element_id] = updated
            event = {"granted": "granted", "denied": "denied", "read": "read"}[new_state.value]
            state.history.append(
                HistoryRecord(element.element_id, event, parse_timestamp(data["at"]))
            )
        elif op == "pending-request-add":
            state.pending_requests[parse_account_id(data["publisher"])] = float(data["at"])
        elif op == "pending-request-remove":
            state.pending_requests.pop(parse_account_id(data["publisher"]), None)
        elif op == "buffer-pub-add":
            state.buffered.append(
                BufferedPublication(card=card_from_json(data["card"]), received_at=float(data["at"]))
            )
        elif op == "buffer-pub-remove":
            keys = {tuple(k) for k in data["keys"]}
            state.buffered = [b for b in state.buffered if b.card.id.key() not in keys]
        elif op == "seen-envelope":
            state.seen_envelopes[data["envelopeId"]] = float(data["at"])
        else:
            raise ConfigError(f"unknown journal op {op!r}")

    @staticmethod
    def _apply_rel(state: AccountState, data: dict) -> None:
        mutation = data["mutation"]
        who = parse_account_id(data["id"])
        if mutation == "add-subscriber":
            group = data["group"]
            old_group = state.accepted_subscribers.get(who)
            if old_group is not None:
                state.groups.get(old_group, set()).discard(who)
            state.accepted_subscribers[who] = group
            state.groups.setdefault(group, set()).add(who)
        elif mutation == "remove-subscriber":
            old_group = state.accepted_subscribers.pop(who, None)
            if old_group is not None:
                state.groups.get(old_group, set()).discard(who)
        elif mutation == "add-publisher":
            state.confirmed_publishers.add(who)
        elif mutation == "remove-publisher":
            state.confirmed_publishers.discard(who)
        else:
            raise ConfigError(f"unknown relationship mutation {mutation!r}")

    def load(self) -> None:
        raw = self._journal_path.read_bytes()
        lines = [ln for ln in raw.split(b"\n") if ln.strip()]
        for index, line in enumerate(lines):
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                # A torn final line is the footprint of a crash mid-append;
                # that mutation was never acknowledged, so drop it.
                if index == len(lines) - 1:
                    break
                raise ConfigError(f"corrupt journal {self._journal_path}: line {index + 1}")
            for event in record["events"]:
                self._apply(event["op"], event["data"])
            self._seq = record["seq"]
            self._line_count += 1
        if self.state is None:
            raise ConfigError(f"journal {self._journal_path} has no provision record")
        self._prune_seen(time.time())

    def _prune_seen(self, now: float) -> None:
        cutoff = now - self.store.seen_retention_seconds
        stale = [k for k, at in self.state.seen_envelopes.items() if at < cutoff]
        for k in stale:
            del self.state.seen_envelopes[k]

    def compact(self) -> None:
        with self.lock:
            self._prune_seen(time.time())
            tmp = self._journal_path.with_suffix(".tmp")
            line = json.dumps(
                {"seq": self._seq, "events": [{"op": "snapshot", "data": _state_to_json(self.state)}]},
                sort_keys=True,
            )
            with open(tmp, "wb") as f:
                f.write((line + "\n").encode("utf-8"))
                f.flush()
                os.fsync(f.fileno())
            if self._file is not None:
                self._file.close()
                self._file = None
            os.replace(tmp, self._journal_path)
            self._fsync_dir()
            self._line_count = 1

    def _fsync_dir(self) -> None:
        fd = os.open(self.directory, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)

    def close(self) -> None:
        with self.lock:
            if self._file is not None:
                self._file.close()
                self._file = None

    # -- staging / PIF --

    def stage_card(self, card: DigitalCard) -> None:
        with self.lock:
            if card.id.concerned != self.account:
                raise WrongConcernedPerson(
                    f"card concerns {card.id.concerned}, account is {self.account}"
                )
            if card.contributor_sig is None or card.counter_sig is not None:
                raise NotSigned("staged cards must be exactly single-signed")
            key = card.id.key()
            existing = self.state.staging.get(key)
            if existing is not None:
                if _serialize_card(existing) == _serialize_card(card):
                    return
                raise ConflictingCardId(f"staged card {key} exists with different bytes")
            assimilated = self.state.pif.get(key)
            if assimilated is not None:
                # Re-contribution of content already accepted is a no-op;
                # different content under the same id is rejected.
                if (
                    canonical_bytes(assimilated.id, assimilated.payload)
                    == canonical_bytes(card.id, card.payload)
                    and assimilated.contributor_sig == card.contributor_sig
                ):
                    return
                raise ConflictingCardId(f"card {key} already assimilated with different bytes")
            self._commit([("stage-card", {"card": card_to_json(card)})])

    def assimilate(self, card_id: CardId, counter_signer) -> DigitalCard:
        with self.lock:
            staged = self.state.staging.get(card_id.key())
            if staged is None:
                raise NotStaged(f"card {card_id.key()} is not staged")
            signed = counter_signer(staged)
            self._commit([("assimilate", {"card": card_to_json(signed)})])
            return signed

    def discard_staged(self, card_id: CardId, note: str = "") -> None:
        with self.lock:
            staged = self.state.staging.get(card_id.key())
            if staged is None:
                raise NotStaged(f"card {card_id.key()} is not staged")
            notice = AttentionElement(
                element_id=uuid.uuid4().hex,
                account=self.account,
                kind=ElementKind.NOTIFICATION,
                subject=Subject.GENERIC_NOTICE,
                payload_ref=card_id,
                created_at=now_utc(),
                state=ElementState.UNREAD,
                text=note or f"staged card '{staged.payload.title}' discarded",
            )
            self._commit(
                [
                    ("remove-staged", {"key": list(card_id.key())}),
                    ("attention-add", {"element": notice.to_json()}),
                ]
            )

    def restore_pif_card(self, card: DigitalCard, registry: KeyRegistry) -> None:
        """Import path: re-insert an already double-signed card into the PIF."""
        with self.lock:
            report = verify_card(card, registry)
            if report.overall is not CardStatus.DOUBLE_SIGNED:
                raise VerificationFailed(
                    f"card {card.id.key()} is {report.overall.value}, not double-signed"
                )
            existing = self.state.pif.get(card.id.key())
            if existing is not None:
                if _serialize_card(existing) == _serialize_card(card):
                    return
                raise ConflictingCardId(f"PIF card {card.id.key()} exists with different bytes")
            self._commit([("assimilate", {"card": card_to_json(card)})])

    def list_staging(self) -> list[DigitalCard]:
        with self.lock:
            return [c for _, c in sorted(self.state.staging.items())]

    def staged(self, card_id: CardId) -> DigitalCard | None:
        with self.lock:
            return self.state.staging.get(card_id.key())

    def list_pif(self) -> list[DigitalCard]:
        with self.lock:
            return [c for _, c in sorted(self.state.pif.items())]

    def pif_card(self, card_id: CardId) -> DigitalCard | None:
        with self.lock:
            return self.state.pif.get(card_id.key())

    # -- relationships --

    def mutate_relationships(self, mutation: str, who: AccountId, group: str | None = None) -> None:
        with self.lock:
            if not self.store.registry.knows(who):
                raise UnknownAccountId(f"{who} has no registered key")
            if mutation == "add-subscriber":
                if not group:
                    raise ValidationError("add-subscriber requires a group name", field="group")
                data = {"mutation": mutation, "id": who.uri, "group": group}
            elif mutation in ("remove-subscriber", "add-publisher", "remove-publisher"):
                data = {"mutation": mutation, "id": who.uri}
            else:
                raise ValidationError(f"unknown relationship mutation {mutation!r}")
            self._commit([("rel", data)])

    # -- foreign files --

    def absorb_into_fif(self, card: DigitalCard, registry: KeyRegistry) -> None:
        with self.lock:
            report = verify_card(card, registry)
            if report.overall is not CardStatus.DOUBLE_SIGNED:
                raise VerificationFailed(
                    f"card {card.id.key()} is {report.overall.value}, not double-signed"
                )
            fif = self.state.foreign_files.get(card.id.concerned, {})
            existing = fif.get(card.id.key())
            if existing is not None:
                if _serialize_card(existing) == _serialize_card(card):
                    return
                raise ConflictingCardId(f"FIF card {card.id.key()} exists with different bytes")
            self._commit([("fif-put", {"card": card_to_json(card)})])

    def delete_fif(self, concerned: AccountId) -> None:
        with self.lock:
            if concerned not in self.state.foreign_files:
                raise UnknownForeignFile(f"no foreign file for {concerned}")
            self._commit([("fif-delete", {"concerned": concerned.uri})])

    def read_fif(self, concerned: AccountId) -> list[DigitalCard]:
        with self.lock:
            fif = self.state.foreign_files.get(concerned)
            if fif is None:
                raise UnknownForeignFile(f"no foreign file for {concerned}")
            return [c for _, c in sorted(fif.items())]

    def read_dif(self) -> list[DigitalCard]:
        with self.lock:
            out = []
            for concerned in sorted(self.state.foreign_files):
                out.extend(c for _, c in sorted(self.state.foreign_files[concerned].items()))
            return out

    def foreign_file_ids(self) -> list[AccountId]:
        with self.lock:
            return sorted(self.state.foreign_files)

    # -- publication bookkeeping --

    def append_group_log(self, group: str, card_id: CardId) -> None:
        with self.lock:
            self._commit([("group-log-append", {"group": group, "cardId": card_id.to_json()})])

    def group_log(self, group: str) -> list[CardId]:
        with self.lock:
            return list(self.state.group_logs.get(group, []))

    # -- attention --

    def attention_add(self, element: AttentionElement) -> None:
        with self.lock:
            self._commit([("attention-add", {"element": element.to_json()})])

    def attention_set_state(self, element_id: str, state: ElementState) -> None:
        with self.lock:
            self._commit(
                [
                    (
                        "attention-state",
                        {
                            "elementId": element_id,
                            "state": state.value,
                            "at": render_timestamp(now_utc()),
                        },
                    )
                ]
            )

    def attention_get(self, element_id: str) -> AttentionElement | None:
        with self.lock:
            return self.state.attention.get(element_id)

    def list_attention(self) -> list[AttentionElement]:
        with self.lock:
            return [self.state.attention[eid] for eid in self.state.attention_order]

    def attention_history(self) -> list[HistoryRecord]:
        with self.lock:
            return list(self.state.history)

    # -- pending subscription requests (consumer side) --

    def add_pending_request(self, publisher: AccountId) -> None:
        with self.lock:
            self._commit(
                [("pending-request-add", {"publisher": publisher.uri, "at": time.time()})]
            )

    def remove_pending_request(self, publisher: AccountId) -> None:
        with self.lock:
            self._commit([("pending-request-remove", {"publisher": publisher.uri})])

    def has_pending_request(self, publisher: AccountId) -> bool:
        with self.lock:
            return publisher in self.state.pending_requests

    # -- buffered publications (arrive before the grant decision) --

    def buffer_publication(self, card: DigitalCard) -> None:
        with self.lock:
            self._commit([("buffer-pub-add", {"card": card_to_json(card), "at": time.time()})])

    def pop_buffered(self, publisher: AccountId) -> list[DigitalCard]:
        with self.lock:
            matching = [b.card for b in self.state.buffered if b.card.id.concerned == publisher]
            if matching:
                keys = [list(c.id.key()) for c in matching]
                self._commit([("buffer-pub-remove", {"keys": keys})])
            return matching

    def expire_buffered(self, max_age_seconds: float) -> list[DigitalCard]:
        with self.lock:
            cutoff = time.time() - max_age_seconds
            expired = [b.card for b in self.state.buffered if b.received_at < cutoff]
            if expired:
                keys = [list(c.id.key()) for c in expired]
                self._commit([("buffer-pub-remove", {"keys": keys})])
            return expired

    # -- envelope idempotency --

    def is_seen(self, envelope_id: str) -> bool:
        with self.lock:
            return envelope_id in self.state.seen_envelopes

    def record_seen(self, envelope_id: str) -> None:
        with self.lock:
            self._commit([("seen-envelope", {"envelopeId": envelope_id, "at": time.time()})])

    # -- views --

    def mode(self) -> AccountMode:
        with self.lock:
            return self.state.mode

    def strategy(self) -> StrategyConfig:
        with self.lock:
            return self.state.strategy

    def option(self, name: str, default=None):
        with self.lock:
            return self.state.options.get(name, default)

    def subscribers(self) -> dict[AccountId, str]:
        with self.lock:
            return dict(self.state.accepted_subscribers)

    def publishers(self) -> set[AccountId]:
        with self.lock:
            return set(self.state.confirmed_publishers)

    def groups_view(self) -> dict[str, set[AccountId]]:
        with self.lock:
            return {g: set(m) for g, m in self.state.groups.items()}

    def state_dump(self) -> dict:
        with self.lock:
            return _state_to_json(self.state)


def account_dirname(account: AccountId) -> str:
    return hashlib.sha256(account.uri.encode("utf-8")).hexdigest()[:24]


class NodeStore:
    """Directory of per-account handles under one data directory."""

    def __init__(
        self,
        data_dir: str | Path,
        registry: KeyRegistry,
        fsync: bool = True,
        seen_retention_seconds: float = SEEN_RETENTION_SECONDS,
    ):
        self.data_dir = Path(data_dir)
        self.registry = registry
        self.fsync = fsync
        self.seen_retention_seconds = seen_retention_seconds
        self._lock = threading.Lock()
        self._accounts: dict[AccountId, AccountHandle] = {}
        self.data_dir.mkdir(parents=True, exist_ok=True)

    def load_all(self) -> None:
        for path in sorted(self.data_dir.iterdir()):
            if not (path / "journal.jsonl").exists():
                continue
            handle = AccountHandle(self, path)
            handle.load()
            with self._lock:
                self._accounts[handle.account] = handle

    def provision_account(
        self,
        account: AccountId,
        mode: AccountMode,
        strategy: StrategyConfig,
        options: dict | None = None,
    ) -> AccountHandle:
        with self._lock:
            if account in self._accounts:
                raise DuplicateAccount(f"{account} already provisioned on this node")
            directory = self.data_dir / account_dirname(account)
            if (directory / "journal.jsonl").exists():
                raise DuplicateAccount(f"{account} already has a journal on disk")
            directory.mkdir(parents=True, exist_ok=True)
            handle = AccountHandle(self, directory)
            handle._commit(
                [
                    (
                        "provision",
                        {
                            "account": account.uri,
                            "mode": mode.value,
                            "strategy": strategy.to_json(),
                            "options": options or {},
                        },
                    )
                ]
            )
            handle._fsync_dir()
            self._accounts[account] = handle
            return handle

    def has_account(self, account: AccountId) -> bool:
        with self._lock:
            return account in self._accounts

    def get(self, account: AccountId) -> AccountHandle:
        with self._lock:
            handle = self._accounts.get(account)
        if handle is None:
            raise UnknownAccount(f"{account} is not provisioned on this node")
        return handle

    def accounts(self) -> list[AccountId]:
        with self._lock:
            return sorted(self._accounts)

    def close(self) -> None:
        with self._lock:
            handles = list(self._accounts.values())
        for handle in handles:
            handle.close()
