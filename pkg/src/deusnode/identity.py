"""Account identities and the signature primitive.

Account IDs are absolute URIs; scheme and authority are lowercased on parse
and equality is byte-exact on the normalized form. Signing uses Ed25519; the
scheme tag travels inside every signature so verification is self-describing
and other schemes can be registered later without changing stored data.
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit, urlunsplit

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import InvalidKey, MalformedUri, UnknownAccount

MAX_URI_BYTES = 512

ED25519 = "ed25519"
_SEED_LEN = 32
_VERIFY_LEN = 32
_SIG_LEN = 64


@dataclass(frozen=True, order=True)
class AccountId:
    """Normalized absolute URI identifying one account."""

    uri: str

    def __str__(self) -> str:
        return self.uri


def parse_account_id(text: str) -> AccountId:
    """Parse and normalize an account URI.

    Raises MalformedUri unless the input is a non-empty absolute URI
    (scheme + authority) without whitespace, at most 512 bytes.
    """
    if not isinstance(text, str) or not text:
        raise MalformedUri("account id is empty")
    if any(ch.isspace() for ch in text):
        raise MalformedUri("account id contains whitespace")
    if len(text.encode("utf-8")) > MAX_URI_BYTES:
        raise MalformedUri(f"account id exceeds {MAX_URI_BYTES} bytes")
    try:
        parts = urlsplit(text)
    except ValueError as exc:
        raise MalformedUri(f"not a parseable URI: {exc}") from exc
    if not parts.scheme or not parts.netloc:
        raise MalformedUri("account id must be an absolute URI with scheme and authority")
    normalized = urlunsplit(
        (parts.scheme.lower(), parts.netloc.lower(), parts.path, parts.query, parts.fragment)
    )
    return AccountId(normalized)


@dataclass(frozen=True)
class SignKey:
    scheme_tag: str
    data: bytes


@dataclass(frozen=True)
class VerifyKey:
    scheme_tag: str
    data: bytes


@dataclass(frozen=True)
class Signature:
    scheme_tag: str
    data: bytes

    def to_json(self) -> dict:
        return {"schemeTag": self.scheme_tag, "base64": base64.b64encode(self.data).decode("ascii")}

    @classmethod
    def from_json(cls, obj: dict) -> "Signature":
        return cls(scheme_tag=str(obj["schemeTag"]), data=base64.b64decode(obj["base64"]))


@dataclass(frozen=True)
class KeyPair:
    sign_key: SignKey
    verify_key: VerifyKey


def generate_keypair() -> KeyPair:
    priv = Ed25519PrivateKey.generate()
    return KeyPair(
        sign_key=SignKey(ED25519, priv.private_bytes_raw()),
        verify_key=VerifyKey(ED25519, priv.public_key().public_bytes_raw()),
    )


def keypair_from_seed(seed: bytes) -> KeyPair:
    if len(seed) != _SEED_LEN:
        raise InvalidKey(f"ed25519 seed must be {_SEED_LEN} bytes, got {len(seed)}")
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(
        sign_key=SignKey(ED25519, seed),
        verify_key=VerifyKey(ED25519, priv.public_key().public_bytes_raw()),
    )


def verify_key_for(sk: SignKey) -> VerifyKey:
    return keypair_from_seed(sk.data).verify_key


def sign(sk: SignKey, message: bytes) -> Signature:
    """Sign a message. Deterministic for identical (key, message)."""
    if sk.scheme_tag != ED25519:
        raise InvalidKey(f"unsupported signature scheme: {sk.scheme_tag}")
    if len(sk.data) != _SEED_LEN:
        raise InvalidKey(f"ed25519 sign key must be {_SEED_LEN} bytes")
    priv = Ed25519PrivateKey.from_private_bytes(sk.data)
    return Signature(ED25519, priv.sign(message))


def verify(vk: VerifyKey, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` was produced over ``message`` by the key paired with ``vk``.

    Never raises for mismatched inputs; any malformed key, scheme, or
    signature length verifies as False.
    """
    if vk.scheme_tag != ED25519 or sig.scheme_tag != ED25519:
        return False
    if len(vk.data) != _VERIFY_LEN or len(sig.data) != _SIG_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(vk.data).verify(sig.data, message)
        return True
    except (InvalidSignature, ValueError):
        return False


class KeyRegistry:
    """Verify keys and contributor white-lists for all known accounts.

    At most one verify key per account. Reload replaces the whole snapshot
    atomically, so reads never observe a half-loaded registry.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._keys: dict[AccountId, VerifyKey] = {}
        self._white_lists: dict[AccountId, frozenset[AccountId]] = {}

    def register(self, account: AccountId, vk: VerifyKey) -> None:
        with self._lock:
            self._keys[account] = vk

    def set_white_list(self, account: AccountId, contributors: Iterable[AccountId]) -> None:
        entries = frozenset(contributors)
        with self._lock:
            missing = [c for c in entries if c not in self._keys]
            if missing:
                raise UnknownAccount(
                    f"white-list entries without registered keys: {', '.join(str(m) for m in missing)}"
                )
            self._white_lists[account] = entries

    def verify_key(self, account: AccountId) -> VerifyKey:
        with self._lock:
            vk = self._keys.get(account)
        if vk is None:
            raise UnknownAccount(f"no verify key registered for {account}")
        return vk

    def knows(self, account: AccountId) -> bool:
        with self._lock:
            return account in self._keys

    def white_list(self, account: AccountId) -> frozenset[AccountId]:
        with self._lock:
            return self._white_lists.get(account, frozenset())

    def is_white_listed(self, account: AccountId, contributor: AccountId) -> bool:
        return contributor in self.white_list(account)

    def accounts(self) -> list[AccountId]:
        with self._lock:
            return sorted(self._keys)


def load_key_registry(path: str | Path) -> KeyRegistry:
    """Load a registry file: one record per line, ``uri scheme-tag base64-key``.

    Blank lines and ``#`` comments are skipped.
    """
    registry = KeyRegistry()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 3:
            raise InvalidKey(f"{path}:{lineno}: expected 'uri scheme-tag base64-key'")
        uri, tag, b64 = fields
        account = parse_account_id(uri)
        try:
            key_bytes = base64.b64decode(b64, validate=True)
        except Exception as exc:
            raise InvalidKey(f"{path}:{lineno}: bad base64 key: {exc}") from exc
        registry.register(account, VerifyKey(tag, key_bytes))
    return registry


def load_white_list(registry: KeyRegistry, account: AccountId, path: str | Path) -> None:
    """Attach a white-list file (one contributor URI per line) to an account."""
    contributors = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        contributors.append(parse_account_id(line))
    registry.set_white_list(account, contributors)
