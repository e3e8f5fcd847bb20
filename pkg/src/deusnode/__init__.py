"""Multi-tenant DEUS node: mediated publish-subscribe exchange of signed digital cards."""

__version__ = "0.1.0"
