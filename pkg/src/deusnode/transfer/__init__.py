from .core import (
    BindingDescriptor,
    CommandKind,
    DeliveryReceipt,
    Envelope,
    MulticastEntry,
    MulticastReport,
    OutboundCommand,
    RetryPolicy,
    TransferCore,
    Txn,
    fresh_envelope,
    marshal_body,
    negotiate,
    unmarshal_body,
)

__all__ = [
    "BindingDescriptor",
    "CommandKind",
    "DeliveryReceipt",
    "Envelope",
    "MulticastEntry",
    "MulticastReport",
    "OutboundCommand",
    "RetryPolicy",
    "TransferCore",
    "Txn",
    "fresh_envelope",
    "marshal_body",
    "negotiate",
    "unmarshal_body",
]
