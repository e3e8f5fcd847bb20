"""Preparation sublayer: validate raw requests before any Soul code runs.

Every NSI request body passes through one of these parsers; they raise
ValidationError with the offending field, so invalid data never reaches the
Soul subsystems.
"""

from __future__ import annotations

import base64
import threading
import time

from .cards import (
    MAX_BODY_BYTES,
    MAX_DISCRIMINATOR_BYTES,
    CardId,
    CardPayload,
    DigitalCard,
    now_utc,
    parse_timestamp,
)
from .errors import MalformedUri, ValidationError
from .identity import AccountId, parse_account_id

_counter_lock = threading.Lock()
_last_discriminator = 0


def next_discriminator() -> str:
    """Monotonically increasing integer, rendered as decimal."""
    global _last_discriminator
    with _counter_lock:
        value = max(_last_discriminator + 1, int(time.time() * 1000))
        _last_discriminator = value
        return str(value)


def _require_object(body, name: str) -> dict:
    if not isinstance(body, dict):
        raise ValidationError(f"{name} must be a JSON object", field=name)
    return body


def parse_uri_field(body: dict, field: str) -> AccountId:
    value = body.get(field)
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{field} is required", field=field)
    try:
        return parse_account_id(value)
    except MalformedUri as exc:
        raise ValidationError(exc.reason, field=field) from exc


def parse_card_id(obj, field: str = "cardId") -> CardId:
    obj = _require_object(obj, field)
    discriminator = obj.get("discriminator")
    if not isinstance(discriminator, str) or not discriminator:
        raise ValidationError("discriminator is required", field="discriminator")
    return CardId(
        discriminator=discriminator,
        provider=parse_uri_field(obj, "provider"),
        concerned=parse_uri_field(obj, "concerned"),
    )


def parse_contribution(body: dict, caller: AccountId) -> DigitalCard:
    """Validate a contribute request into an unsigned card.

    The discriminator may be omitted (the node generates one) but must not
    be empty when given; the provider defaults to the calling account.
    """
    body = _require_object(body, "request")
    card_obj = _require_object(body.get("card"), "card")
    id_obj = _require_object(card_obj.get("id"), "id")
    payload_obj = _require_object(card_obj.get("payload"), "payload")

    if "discriminator" in id_obj:
        discriminator = id_obj["discriminator"]
        if not isinstance(discriminator, str) or not discriminator:
            raise ValidationError("discriminator must be a non-empty string", field="discriminator")
    else:
        discriminator = next_discriminator()
    if len(discriminator.encode("utf-8")) > MAX_DISCRIMINATOR_BYTES:
        raise ValidationError(
            f"discriminator exceeds {MAX_DISCRIMINATOR_BYTES} bytes", field="discriminator"
        )

    provider = parse_uri_field(id_obj, "provider") if "provider" in id_obj else caller
    concerned = parse_uri_field(id_obj, "concerned")

    media_type = payload_obj.get("mediaType")
    if not isinstance(media_type, str) or not media_type:
        raise ValidationError("mediaType is required", field="mediaType")
    title = payload_obj.get("title", "")
    if not isinstance(title, str):
        raise ValidationError("title must be a string", field="title")
    body_b64 = payload_obj.get("bodyBase64", "")
    try:
        card_body = base64.b64decode(body_b64, validate=True)
    except Exception as exc:
        raise ValidationError(f"bodyBase64 is not valid base64: {exc}", field="body") from exc
    if len(card_body) > MAX_BODY_BYTES:
        raise ValidationError(f"body exceeds the {MAX_BODY_BYTES} byte limit", field="body")
    created_at = (
        parse_timestamp(str(payload_obj["createdAt"])) if "createdAt" in payload_obj else now_utc()
    )

    return DigitalCard(
        id=CardId(discriminator=discriminator, provider=provider, concerned=concerned),
        payload=CardPayload(
            media_type=media_type, title=title, body=card_body, created_at=created_at
        ),
    )


def parse_decision(body: dict) -> tuple[str, dict]:
    body = _require_object(body, "request")
    verdict = body.get("verdict")
    if verdict not in ("grant", "deny"):
        raise ValidationError("verdict must be 'grant' or 'deny'", field="verdict")
    args: dict = {}
    if "group" in body:
        group = body["group"]
        if not isinstance(group, str) or not group:
            raise ValidationError("group must be a non-empty string", field="group")
        args["group"] = group
    if "groups" in body:
        groups = body["groups"]
        if groups is not None and (
            not isinstance(groups, list) or any(not isinstance(g, str) or not g for g in groups)
        ):
            raise ValidationError("groups must be a list of non-empty strings", field="groups")
        args["groups"] = groups
    if "cardPicks" in body:
        picks = body["cardPicks"]
        if not isinstance(picks, list):
            raise ValidationError("cardPicks must be a list", field="cardPicks")
        args["cardPicks"] = [parse_card_id(p, "cardPicks").to_json() for p in picks]
    return verdict, args


def parse_publish(body: dict) -> tuple[CardId, list[str] | None]:
    body = _require_object(body, "request")
    card_id = parse_card_id(body.get("cardId"))
    groups = body.get("groups")
    if groups is not None:
        if not isinstance(groups, list) or any(not isinstance(g, str) or not g for g in groups):
            raise ValidationError("groups must be a list of non-empty strings", field="groups")
    return card_id, groups


def parse_cancel(body: dict) -> tuple[AccountId, bool]:
    body = _require_object(body, "request")
    consumer = parse_uri_field(body, "consumer")
    demand = body.get("demandDeletion", False)
    if not isinstance(demand, bool):
        raise ValidationError("demandDeletion must be a boolean", field="demandDeletion")
    return consumer, demand
