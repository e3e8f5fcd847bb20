"""Digital cards: the signed unit of exchange.

A card is identified by the (discriminator, provider, concerned) triple and
carries an opaque display-level payload. The contributor signs the canonical
byte image of id+payload; the concerned person counter-signs the canonical
bytes plus the contributor signature. Cards are immutable; signing returns a
new value.

Canonical form: each field UTF-8 encoded and prefixed with its 8-byte
big-endian length, concatenated in the fixed order discriminator, provider,
concerned, media-type, title, created-at (RFC 3339), body.
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum

from . import identity
from .errors import (
    AlreadyCounterSigned,
    AlreadySigned,
    MissingContributorSig,
    ValidationError,
)
from .identity import AccountId, KeyRegistry, SignKey, Signature, parse_account_id

MAX_BODY_BYTES = 16 * 1024 * 1024
MAX_DISCRIMINATOR_BYTES = 128


def length_prefixed(*fields: bytes) -> bytes:
    """Concatenate byte fields, each preceded by its 8-byte big-endian length."""
    out = bytearray()
    for field in fields:
        out += struct.pack(">Q", len(field))
        out += field
    return bytes(out)


def render_timestamp(ts: datetime) -> str:
    """RFC 3339 UTC timestamp at seconds precision."""
    return ts.astimezone(timezone.utc).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise ValidationError(f"bad timestamp {text!r}: {exc}", field="createdAt") from exc


def now_utc() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True, order=True)
class CardId:
    discriminator: str
    provider: AccountId
    concerned: AccountId

    def __post_init__(self):
        if not self.discriminator:
            raise ValidationError("discriminator must be non-empty", field="discriminator")
        if len(self.discriminator.encode("utf-8")) > MAX_DISCRIMINATOR_BYTES:
            raise ValidationError(
                f"discriminator exceeds {MAX_DISCRIMINATOR_BYTES} bytes", field="discriminator"
            )

    def to_json(self) -> dict:
        return {
            "discriminator": self.discriminator,
            "provider": self.provider.uri,
            "concerned": self.concerned.uri,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CardId":
        return cls(
            discriminator=str(obj["discriminator"]),
            provider=parse_account_id(str(obj["provider"])),
            concerned=parse_account_id(str(obj["concerned"])),
        )

    def key(self) -> tuple[str, str, str]:
        return (self.discriminator, self.provider.uri, self.concerned.uri)


@dataclass(frozen=True)
class CardPayload:
    media_type: str
    title: str
    body: bytes
    created_at: datetime

    def __post_init__(self):
        if not self.media_type:
            raise ValidationError("media-type must be non-empty", field="mediaType")
        if len(self.body) > MAX_BODY_BYTES:
            raise ValidationError(
                f"body exceeds the {MAX_BODY_BYTES} byte limit", field="body"
            )
        if self.created_at.tzinfo is None:
            raise ValidationError("created-at must be timezone-aware", field="createdAt")


@dataclass(frozen=True)
class DigitalCard:
    id: CardId
    payload: CardPayload
    contributor_sig: Signature | None = None
    counter_sig: Signature | None = None

    def __post_init__(self):
        if self.counter_sig is not None and self.contributor_sig is None:
            raise ValidationError("counter-signature without contributor signature")


def canonical_bytes(card_id: CardId, payload: CardPayload) -> bytes:
    """Deterministic byte image the contributor signature covers."""
    return length_prefixed(
        card_id.discriminator.encode("utf-8"),
        card_id.provider.uri.encode("utf-8"),
        card_id.concerned.uri.encode("utf-8"),
        payload.media_type.encode("utf-8"),
        payload.title.encode("utf-8"),
        render_timestamp(payload.created_at).encode("utf-8"),
        payload.body,
    )


def counter_sign_bytes(card: DigitalCard) -> bytes:
    """Byte image the counter-signature covers: canonical bytes ++ contributor sig."""
    assert card.contributor_sig is not None
    return canonical_bytes(card.id, card.payload) + card.contributor_sig.data


def contributor_sign(card: DigitalCard, sk: SignKey) -> DigitalCard:
    if card.contributor_sig is not None:
        raise AlreadySigned(f"card {card.id.key()} already carries a contributor signature")
    sig = identity.sign(sk, canonical_bytes(card.id, card.payload))
    return replace(card, contributor_sig=sig)


def counter_sign(card: DigitalCard, sk: SignKey) -> DigitalCard:
    if card.contributor_sig is None:
        raise MissingContributorSig(f"card {card.id.key()} has no contributor signature")
    if card.counter_sig is not None:
        raise AlreadyCounterSigned(f"card {card.id.key()} already counter-signed")
    sig = identity.sign(sk, counter_sign_bytes(card))
    return replace(card, counter_sig=sig)


class SigStatus(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    ABSENT = "absent"


class CardStatus(str, Enum):
    UNSIGNED = "unsigned"
    SINGLE_SIGNED = "single-signed"
    DOUBLE_SIGNED = "double-signed"
    TAMPERED = "tampered"


@dataclass(frozen=True)
class VerificationReport:
    contributor: SigStatus
    counter: SigStatus
    overall: CardStatus


def verify_card(card: DigitalCard, registry: KeyRegistry) -> VerificationReport:
    """Check both signatures against the registry keys of the id's accounts.

    Raises UnknownAccount if provider or concerned has no registered key.
    """
    provider_vk = registry.verify_key(card.id.provider)
    concerned_vk = registry.verify_key(card.id.concerned)

    if card.contributor_sig is None:
        contributor = SigStatus.ABSENT
    elif identity.verify(provider_vk, canonical_bytes(card.id, card.payload), card.contributor_sig):
        contributor = SigStatus.VALID
    else:
        contributor = SigStatus.INVALID

    if card.counter_sig is None:
        counter = SigStatus.ABSENT
    elif card.contributor_sig is not None and identity.verify(
        concerned_vk, counter_sign_bytes(card), card.counter_sig
    ):
        counter = SigStatus.VALID
    else:
        counter = SigStatus.INVALID

    if contributor is SigStatus.ABSENT and counter is SigStatus.ABSENT:
        overall = CardStatus.UNSIGNED
    elif contributor is SigStatus.INVALID or counter is SigStatus.INVALID:
        overall = CardStatus.TAMPERED
    elif counter is SigStatus.VALID:
        overall = CardStatus.DOUBLE_SIGNED
    else:
        overall = CardStatus.SINGLE_SIGNED
    return VerificationReport(contributor=contributor, counter=counter, overall=overall)


def card_to_json(card: DigitalCard) -> dict:
    """Interchange form; round-trips byte-exactly through canonical_bytes."""
    sigs = {}
    if card.contributor_sig is not None:
        sigs["contributor"] = card.contributor_sig.to_json()
    if card.counter_sig is not None:
        sigs["counter"] = card.counter_sig.to_json()
    return {
        "id": card.id.to_json(),
        "payload": {
            "mediaType": card.payload.media_type,
            "title": card.payload.title,
            "createdAt": render_timestamp(card.payload.created_at),
            "bodyBase64": base64.b64encode(card.payload.body).decode("ascii"),
        },
        "sigs": sigs,
    }


def card_from_json(obj: dict) -> DigitalCard:
    try:
        card_id = CardId.from_json(obj["id"])
        p = obj["payload"]
        payload = CardPayload(
            media_type=str(p["mediaType"]),
            title=str(p["title"]),
            body=base64.b64decode(p["bodyBase64"]),
            created_at=parse_timestamp(str(p["createdAt"])),
        )
        sigs = obj.get("sigs") or {}
        contributor = Signature.from_json(sigs["contributor"]) if "contributor" in sigs else None
        counter = Signature.from_json(sigs["counter"]) if "counter" in sigs else None
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed card object: missing {exc}") from exc
    return DigitalCard(
        id=card_id, payload=payload, contributor_sig=contributor, counter_sig=counter
    )
