"""Command body vocabulary for the message protocol.

Request and decision messages are signed over canonical length-prefixed
images (the same framing cards use), so receivers can verify provenance
against the key registry before acting.
"""

from __future__ import annotations

from ..cards import length_prefixed
from ..errors import BadSignature, MalformedEnvelope
from ..identity import (
    AccountId,
    KeyRegistry,
    SignKey,
    Signature,
    parse_account_id,
    sign,
    verify,
)

GRANT = "grant"
DENY = "deny"


def request_signing_bytes(requester: AccountId, publisher: AccountId) -> bytes:
    return length_prefixed(
        b"request-subscription", requester.uri.encode("utf-8"), publisher.uri.encode("utf-8")
    )


def decision_signing_bytes(
    publisher: AccountId, requester: AccountId, verdict: str, group: str
) -> bytes:
    return length_prefixed(
        b"decision-subscription",
        publisher.uri.encode("utf-8"),
        requester.uri.encode("utf-8"),
        verdict.encode("utf-8"),
        group.encode("utf-8"),
    )


def build_request_subscription(requester: AccountId, publisher: AccountId, sk: SignKey) -> dict:
    signature = sign(sk, request_signing_bytes(requester, publisher))
    return {"requester": requester.uri, "signature": signature.to_json()}


def verify_request_subscription(body: dict, publisher: AccountId, registry: KeyRegistry) -> AccountId:
    try:
        requester = parse_account_id(str(body["requester"]))
        signature = Signature.from_json(body["signature"])
    except (KeyError, TypeError) as exc:
        raise MalformedEnvelope(f"bad subscription request body: {exc}") from exc
    vk = registry.verify_key(requester)
    if not verify(vk, request_signing_bytes(requester, publisher), signature):
        raise BadSignature(f"subscription request from {requester} fails verification")
    return requester


def build_decision(
    publisher: AccountId, requester: AccountId, verdict: str, group: str, sk: SignKey
) -> dict:
    signature = sign(sk, decision_signing_bytes(publisher, requester, verdict, group))
    return {
        "publisher": publisher.uri,
        "requester": requester.uri,
        "verdict": verdict,
        "group": group,
        "signature": signature.to_json(),
    }


def verify_decision(body: dict, registry: KeyRegistry) -> tuple[AccountId, AccountId, str, str]:
    try:
        publisher = parse_account_id(str(body["publisher"]))
        requester = parse_account_id(str(body["requester"]))
        verdict = str(body["verdict"])
        group = str(body.get("group", ""))
        signature = Signature.from_json(body["signature"])
    except (KeyError, TypeError) as exc:
        raise MalformedEnvelope(f"bad decision body: {exc}") from exc
    if verdict not in (GRANT, DENY):
        raise MalformedEnvelope(f"bad decision verdict {verdict!r}")
    vk = registry.verify_key(publisher)
    if not verify(vk, decision_signing_bytes(publisher, requester, verdict, group), signature):
        raise BadSignature(f"decision from {publisher} fails verification")
    return publisher, requester, verdict, group


def build_cancel(publisher: AccountId, demand_deletion: bool) -> dict:
    return {"publisher": publisher.uri, "demandDeletion": bool(demand_deletion)}


def parse_cancel(body: dict) -> tuple[AccountId, bool]:
    try:
        return parse_account_id(str(body["publisher"])), bool(body.get("demandDeletion", False))
    except (KeyError, TypeError) as exc:
        raise MalformedEnvelope(f"bad cancel body: {exc}") from exc


def build_unsubscribe(consumer: AccountId) -> dict:
    return {"consumer": consumer.uri}


def parse_unsubscribe(body: dict) -> AccountId:
    try:
        return parse_account_id(str(body["consumer"]))
    except (KeyError, TypeError) as exc:
        raise MalformedEnvelope(f"bad unsubscribe body: {exc}") from exc


def build_notice(
    sender: AccountId,
    kind: str,
    text: str,
    demand_deletion: bool = False,
    card_id: dict | None = None,
) -> dict:
    body: dict = {"from": sender.uri, "kind": kind, "text": text}
    if demand_deletion:
        body["demandDeletion"] = True
    if card_id is not None:
        body["cardId"] = card_id
    return body


def parse_notice(body: dict) -> tuple[AccountId, str, str, bool]:
    try:
        sender = parse_account_id(str(body["from"]))
        kind = str(body.get("kind", "generic"))
        text = str(body.get("text", ""))
        demand_deletion = bool(body.get("demandDeletion", False))
    except (KeyError, TypeError) as exc:
        raise MalformedEnvelope(f"bad notice body: {exc}") from exc
    return sender, kind, text, demand_deletion
