"""Shared fixtures: deterministic keys, node configs, in-process nodes."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from deusnode.cards import CardId, CardPayload, DigitalCard, now_utc
from deusnode.config import AccountConfig, NodeConfig
from deusnode.identity import KeyPair, keypair_from_seed, parse_account_id
from deusnode.node import DeusNode
from deusnode.store import AccountMode, StrategyConfig
from deusnode.transfer import RetryPolicy
from deusnode.transfer.bindings import LOCAL_MARKER


def keys_for(uri: str) -> KeyPair:
    return keypair_from_seed(hashlib.sha256(f"seed:{uri}".encode()).digest())


@dataclass
class AccountSpec:
    uri: str
    mode: AccountMode = AccountMode.INTERACTIVE
    strategy: StrategyConfig = field(default_factory=lambda: StrategyConfig.from_json({"kind": "nothing"}))
    options: dict = field(default_factory=dict)
    white_list: tuple[str, ...] = ()

    @property
    def account(self):
        return parse_account_id(self.uri)

    @property
    def token(self) -> str:
        return "token-" + hashlib.sha256(self.uri.encode()).hexdigest()[:12]


def write_key_registry(path: Path, uris: list[str]) -> None:
    lines = []
    for uri in uris:
        kp = keys_for(uri)
        lines.append(f"{uri} ed25519 {base64.b64encode(kp.verify_key.data).decode()}")
    path.write_text("\n".join(lines) + "\n")


def write_peer_table(path: Path, placements: dict[str, str]) -> None:
    """placements: account uri -> base url or LOCAL_MARKER."""
    import json

    table = {
        uri: {
            "baseUrl": base,
            "protocols": [{"protocol": "http", "priority": 50}],
        }
        for uri, base in placements.items()
    }
    path.write_text(json.dumps(table, indent=1))


def build_node(
    tmp_path: Path,
    specs: list[AccountSpec],
    node_name: str = "node-test",
    all_uris: list[str] | None = None,
    placements: dict[str, str] | None = None,
    port: int = 0,
    fsync: bool = False,
    retry: RetryPolicy | None = None,
) -> DeusNode:
    node_dir = tmp_path / node_name
    node_dir.mkdir(parents=True, exist_ok=True)
    uris = all_uris or [s.uri for s in specs]
    registry_file = node_dir / "keys.txt"
    write_key_registry(registry_file, uris)
    peer_file = node_dir / "peers.json"
    write_peer_table(peer_file, placements or {u: LOCAL_MARKER for u in uris})
    accounts = tuple(
        AccountConfig(
            account=s.account,
            mode=s.mode,
            strategy=s.strategy,
            token=s.token,
            sign_key=keys_for(s.uri).sign_key,
            white_list=tuple(parse_account_id(u) for u in s.white_list),
            options=dict(s.options),
        )
        for s in specs
    )
    config = NodeConfig(
        node_name=node_name,
        listen_host="127.0.0.1",
        listen_port=port,
        data_dir=node_dir / "data",
        peer_table_file=peer_file,
        key_registry_file=registry_file,
        accounts=accounts,
        admin_token="admin-" + node_name,
        fsync=fsync,
        retry_policy=retry or RetryPolicy(attempts=2, backoff_base=0.01),
    )
    return DeusNode(config)


def make_card(discriminator: str, provider: str, concerned: str, title: str | None = None) -> DigitalCard:
    return DigitalCard(
        id=CardId(
            discriminator=discriminator,
            provider=parse_account_id(provider),
            concerned=parse_account_id(concerned),
        ),
        payload=CardPayload(
            media_type="text/plain",
            title=title or f"card {discriminator}",
            body=f"body of {discriminator}".encode(),
            created_at=now_utc(),
        ),
    )


ALICE = "https://ids.example/alice"
BOB = "https://ids.example/bob"
HIGGINS = "https://ids.example/higgins"
CAROL = "https://ids.example/carol"


def free_port() -> int:
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def build_cluster(tmp_path: Path, node_specs: dict[str, list[AccountSpec]], fsync: bool = False):
    """Start one NodeServer per entry; peer tables point across real ports.

    Returns {node_name: NodeServer}; callers stop() each server.
    """
    from deusnode.service import NodeServer

    ports = {name: free_port() for name in node_specs}
    all_uris = [s.uri for specs in node_specs.values() for s in specs]
    servers: dict[str, NodeServer] = {}
    for name, specs in node_specs.items():
        placements = {}
        own = {s.uri for s in specs}
        for uri in all_uris:
            if uri in own:
                placements[uri] = LOCAL_MARKER
            else:
                owner = next(n for n, sp in node_specs.items() if any(x.uri == uri for x in sp))
                placements[uri] = f"http://127.0.0.1:{ports[owner]}"
        node = build_node(
            tmp_path,
            specs,
            node_name=name,
            all_uris=all_uris,
            placements=placements,
            port=ports[name],
            fsync=fsync,
        )
        servers[name] = NodeServer(node)
    for server in servers.values():
        server.start()
    return servers
