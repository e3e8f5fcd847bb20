"""Node configuration: listen address, data directory, peers, keys, accounts."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .identity import (
    ED25519,
    AccountId,
    KeyRegistry,
    SignKey,
    load_key_registry,
    parse_account_id,
)
from .store import AccountMode, StrategyConfig
from .transfer import RetryPolicy


@dataclass(frozen=True)
class AccountConfig:
    account: AccountId
    mode: AccountMode
    strategy: StrategyConfig
    token: str
    sign_key: SignKey | None = None
    white_list: tuple[AccountId, ...] = ()
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NodeConfig:
    node_name: str
    listen_host: str
    listen_port: int
    data_dir: Path
    peer_table_file: Path
    key_registry_file: Path
    accounts: tuple[AccountConfig, ...]
    admin_token: str | None = None
    fsync: bool = True
    http_priority: int = 50
    http_timeout: float = 5.0
    retry_policy: RetryPolicy = RetryPolicy()
    console_dir: Path | None = None

    @property
    def base_url(self) -> str:
        return f"http://{self.listen_host}:{self.listen_port}"


def _read_sign_key(entry: dict, base: Path) -> SignKey | None:
    if "signKeyBase64" in entry:
        raw = base64.b64decode(entry["signKeyBase64"])
        return SignKey(ED25519, raw)
    if "signKeyFile" in entry:
        path = _resolve(base, entry["signKeyFile"])
        try:
            text = path.read_text().strip()
        except OSError as exc:
            raise ConfigError(f"cannot read sign key {path}: {exc}") from exc
        return SignKey(ED25519, base64.b64decode(text))
    return None


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def parse_account_config(entry: dict, base: Path) -> AccountConfig:
    try:
        account = parse_account_id(str(entry["account"]))
        mode = AccountMode(entry.get("mode", "interactive"))
        strategy = StrategyConfig.from_json(entry.get("strategy", {"kind": "nothing"}))
        token = str(entry["token"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad account entry: {exc}") from exc
    white_list: list[AccountId] = []
    if "whiteList" in entry:
        white_list = [parse_account_id(u) for u in entry["whiteList"]]
    elif "whiteListFile" in entry:
        path = _resolve(base, entry["whiteListFile"])
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read white list {path}: {exc}") from exc
        white_list = [parse_account_id(ln.strip()) for ln in lines if ln.strip() and not ln.startswith("#")]
    options = dict(entry.get("options", {}))
    options.setdefault("publishToAll", mode is AccountMode.VIRTUAL_AUTO_ACCEPT)
    return AccountConfig(
        account=account,
        mode=mode,
        strategy=strategy,
        token=token,
        sign_key=_read_sign_key(entry, base),
        white_list=tuple(white_list),
        options=options,
    )


def load_node_config(path: str | Path) -> NodeConfig:
    path = Path(path)
    base = path.parent
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read node config {path}: {exc}") from exc
    try:
        listen = str(raw["listenAddress"])
        host, _, port_text = listen.rpartition(":")
        port = int(port_text)
        retry_raw = raw.get("retry", {})
        retry = RetryPolicy(
            attempts=int(retry_raw.get("attempts", 5)),
            backoff_base=float(retry_raw.get("backoffBase", 0.2)),
        )
        config = NodeConfig(
            node_name=str(raw["nodeName"]),
            listen_host=host or "127.0.0.1",
            listen_port=port,
            data_dir=_resolve(base, str(raw["dataDir"])),
            peer_table_file=_resolve(base, str(raw["peerTableFile"])),
            key_registry_file=_resolve(base, str(raw["keyRegistryFile"])),
            accounts=tuple(parse_account_config(e, base) for e in raw.get("accounts", [])),
            admin_token=raw.get("adminToken"),
            fsync=bool(raw.get("fsync", True)),
            http_priority=int(raw.get("httpPriority", 50)),
            http_timeout=float(raw.get("httpTimeout", 5.0)),
            retry_policy=retry,
            console_dir=_resolve(base, raw["consoleDir"]) if raw.get("consoleDir") else None,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad node config {path}: {exc}") from exc
    for file_path in (config.peer_table_file, config.key_registry_file):
        if not file_path.is_file():
            raise ConfigError(f"referenced file not readable: {file_path}")
    return config


def load_registry_with_accounts(config: NodeConfig) -> KeyRegistry:
    """Load the shared key registry and attach per-account white-lists."""
    registry = load_key_registry(config.key_registry_file)
    from .identity import keypair_from_seed

    for entry in config.accounts:
        if entry.sign_key is not None:
            derived = keypair_from_seed(entry.sign_key.data).verify_key
            if registry.knows(entry.account):
                if registry.verify_key(entry.account) != derived:
                    raise ConfigError(
                        f"{entry.account}: sign key does not match the registry verify key"
                    )
            else:
                registry.register(entry.account, derived)
    for entry in config.accounts:
        if entry.white_list:
            registry.set_white_list(entry.account, entry.white_list)
    return registry
