"""Domain error hierarchy shared by every subsystem.

Each error carries a stable machine-readable ``code`` (used in API error
bodies and CLI output) and the HTTP status the NSI layer maps it to.
"""

from __future__ import annotations


class DeusError(Exception):
    """Base class for all domain errors."""

    code = "error"
    http_status = 400

    def __init__(self, reason: str = "", field: str | None = None):
        super().__init__(reason or self.code)
        self.reason = reason or self.code
        self.field = field

    def to_body(self) -> dict:
        body = {"code": self.code, "reason": self.reason}
        if self.field:
            body["field"] = self.field
        return body


# --- identity / crypto ---

class MalformedUri(DeusError):
    code = "malformed-uri"


class InvalidKey(DeusError):
    code = "invalid-key"


# --- digital card ---

class AlreadySigned(DeusError):
    code = "already-signed"
    http_status = 409


class MissingContributorSig(DeusError):
    code = "missing-contributor-sig"
    http_status = 409


class AlreadyCounterSigned(DeusError):
    code = "already-counter-signed"
    http_status = 409


class UnknownAccount(DeusError):
    code = "unknown-account"
    http_status = 404


# --- store ---

class DuplicateAccount(DeusError):
    code = "duplicate-account"
    http_status = 409


class WrongConcernedPerson(DeusError):
    code = "wrong-concerned-person"


class NotSigned(DeusError):
    code = "not-signed"


class ConflictingCardId(DeusError):
    code = "conflicting-card-id"
    http_status = 409


class NotStaged(DeusError):
    code = "not-staged"
    http_status = 404


class UnknownAccountId(DeusError):
    code = "unknown-account-id"


class VerificationFailed(DeusError):
    code = "verification-failed"


class UnknownForeignFile(DeusError):
    code = "unknown-foreign-file"
    http_status = 404


# --- transfer ---

class DuplicateProtocol(DeusError):
    code = "duplicate-protocol"
    http_status = 409


class NoCommonProtocol(DeusError):
    code = "no-common-protocol"
    http_status = 502


class UnsupportedProtocol(DeusError):
    code = "unsupported-protocol"


class DeliveryFailed(DeusError):
    code = "delivery-failed"
    http_status = 502


class AttemptFailed(DeusError):
    """Single delivery attempt failed; ``permanent`` decides retry eligibility."""

    code = "attempt-failed"

    def __init__(self, reason: str = "", permanent: bool = False):
        super().__init__(reason)
        self.permanent = permanent


class MalformedEnvelope(DeusError):
    code = "malformed-envelope"


class UnknownReceiverAccount(DeusError):
    code = "unknown-receiver-account"
    http_status = 404


# --- soul ---

class WrongProvider(DeusError):
    code = "wrong-provider"


class NoSignKey(DeusError):
    code = "no-sign-key"


class UnknownGroup(DeusError):
    code = "unknown-group"
    http_status = 404


class NotInPif(DeusError):
    code = "not-in-pif"
    http_status = 404


class SelfSubscription(DeusError):
    code = "self-subscription"


class UnknownPlea(DeusError):
    code = "unknown-plea"
    http_status = 404


class NotASubscriber(DeusError):
    code = "not-a-subscriber"
    http_status = 404


class NotSubscribed(DeusError):
    code = "not-subscribed"
    http_status = 404


class AlreadySubscribed(DeusError):
    code = "already-subscribed"
    http_status = 409


class RequestPending(DeusError):
    code = "request-pending"
    http_status = 409


class NoPendingRequest(DeusError):
    code = "no-pending-request"
    http_status = 409


class BadSignature(DeusError):
    code = "bad-signature"


class UnknownPublisher(DeusError):
    code = "unknown-publisher"


# --- barker ---

class NotPending(DeusError):
    code = "not-pending"
    http_status = 409


class NotAPlea(DeusError):
    code = "not-a-plea"
    http_status = 409


class UnknownElement(DeusError):
    code = "unknown-element"
    http_status = 404


class NotUnread(DeusError):
    code = "not-unread"
    http_status = 409


# --- nsi / node ---

class ValidationError(DeusError):
    code = "validation"


class ConfigError(DeusError):
    code = "config-error"
    http_status = 500


class BindFailure(DeusError):
    code = "bind-failure"
    http_status = 500


# --- scenario harness ---

class ScenarioFailed(DeusError):
    code = "scenario-failed"
    http_status = 500


class SpawnError(DeusError):
    code = "spawn-error"
    http_status = 500


class InvariantViolation(DeusError):
    code = "invariant-violation"
    http_status = 500

    def __init__(self, reason: str = "", trace: list | None = None):
        super().__init__(reason)
        self.trace = trace or []
