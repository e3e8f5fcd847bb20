"""Operator CLI: every subcommand maps 1:1 onto an NSI endpoint.

Exit code 0 on success; nonzero with the structured error body on stderr.
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path
from urllib.parse import quote

import click
import httpx

from .errors import DeusError


def _fail(body: dict, status: int = 1):
    click.echo(json.dumps(body, sort_keys=True), err=True)
    sys.exit(status)


def _request(method: str, url: str, token: str | None = None, body: dict | None = None) -> dict:
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    try:
        response = httpx.request(method, url, json=body, headers=headers, timeout=30.0)
    except httpx.HTTPError as exc:
        _fail({"code": "connection-error", "reason": str(exc)})
    if response.status_code >= 400:
        try:
            _fail(response.json())
        except json.JSONDecodeError:
            _fail({"code": "http-error", "reason": response.text[:200]})
    return response.json()


api_option = click.option("--api", envvar="DEUS_API", required=True, help="node base URL")
token_option = click.option("--token", envvar="DEUS_TOKEN", required=True, help="account bearer token")
json_option = click.option("--json", "as_json", is_flag=True, help="print raw JSON")


def _print_cards(cards: list[dict], as_json: bool):
    if as_json:
        click.echo(json.dumps(cards, sort_keys=True))
        return
    for card in cards:
        sigs = card.get("sigs", {})
        status = "double-signed" if "counter" in sigs else ("single-signed" if "contributor" in sigs else "unsigned")
        click.echo(
            "\t".join(
                [
                    card["id"]["discriminator"],
                    card["id"]["provider"],
                    card["id"]["concerned"],
                    card["payload"]["title"],
                    card["payload"]["createdAt"],
                    status,
                ]
            )
        )


@click.group()
def main():
    """Operate a node: serve, drive accounts, run scenarios."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run a node in the foreground."""
    from .config import load_node_config
    from .service import serve as serve_node

    try:
        serve_node(load_node_config(config_path))
    except DeusError as exc:
        _fail(exc.to_body())


@main.command()
@click.option("--out", "out_path", type=click.Path(), help="write the base64 seed here")
def keygen(out_path):
    """Generate an Ed25519 keypair; print base64 seed and verify key."""
    from .identity import generate_keypair

    pair = generate_keypair()
    seed_b64 = base64.b64encode(pair.sign_key.data).decode()
    verify_b64 = base64.b64encode(pair.verify_key.data).decode()
    if out_path:
        Path(out_path).write_text(seed_b64 + "\n")
        click.echo(f"sign key written to {out_path}")
    else:
        click.echo(f"signKeyBase64:\t{seed_b64}")
    click.echo(f"verifyKeyBase64:\t{verify_b64}")


@main.group()
def account():
    """Provision and list accounts (admin token)."""


@account.command("provision")
@api_option
@click.option("--admin-token", envvar="DEUS_ADMIN_TOKEN", required=True)
@click.option("--account", "account_uri", required=True)
@click.option("--mode", default="interactive", type=click.Choice(["interactive", "virtual-auto-accept"]))
@click.option("--strategy-kind", default="nothing",
              type=click.Choice(["global-set", "manual-selection", "group-history", "nothing"]))
@click.option("--account-token", required=True, help="bearer token for the new account")
@click.option("--sign-key-file", type=click.Path(exists=True), help="file with base64 seed")
def account_provision(api, admin_token, account_uri, mode, strategy_kind, account_token, sign_key_file):
    body = {
        "account": account_uri,
        "mode": mode,
        "strategy": {"kind": strategy_kind},
        "token": account_token,
    }
    if sign_key_file:
        body["signKeyBase64"] = Path(sign_key_file).read_text().strip()
    out = _request("POST", f"{api}/nsi/v1/accounts", token=admin_token, body=body)
    click.echo(out["account"])


@account.command("list")
@api_option
@click.option("--admin-token", envvar="DEUS_ADMIN_TOKEN", required=True)
@json_option
def account_list(api, admin_token, as_json):
    out = _request("GET", f"{api}/nsi/v1/accounts", token=admin_token)
    if as_json:
        click.echo(json.dumps(out, sort_keys=True))
        return
    for entry in out["accounts"]:
        click.echo(f"{entry['account']}\t{entry['mode']}\t{entry['strategy']['kind']}")


@main.command()
@api_option
@token_option
@click.option("--card", "card_file", required=True, type=click.Path(exists=True),
              help="card JSON file: {id: {...}, payload: {...}}")
def contribute(api, token, card_file):
    """Sign a card file and forward it to the concerned person."""
    card = json.loads(Path(card_file).read_text())
    out = _request("POST", f"{api}/nsi/v1/contribute", token=token, body={"card": card})
    click.echo(json.dumps(out, sort_keys=True))


@main.group()
def attention():
    """Inspect and decide attention elements."""


@attention.command("list")
@api_option
@token_option
@click.option("--include-read", is_flag=True)
@json_option
def attention_list(api, token, include_read, as_json):
    url = f"{api}/nsi/v1/attention"
    if include_read:
        url += "?includeRead=true"
    out = _request("GET", url, token=token)
    if as_json:
        click.echo(json.dumps(out, sort_keys=True))
        return
    for element in out["elements"]:
        click.echo(
            "\t".join(
                [
                    element["elementId"],
                    element["kind"],
                    element["subject"],
                    element["state"],
                    element["text"],
                ]
            )
        )


@attention.command("decide")
@api_option
@token_option
@click.argument("element_id")
@click.option("--verdict", required=True, type=click.Choice(["grant", "deny"]))
@click.option("--group", help="publication group for subscription grants")
@click.option("--groups", help="comma-separated target groups for repatriation grants")
@click.option("--pick", "picks", multiple=True,
              help="card pick discriminator,provider,concerned (repeatable)")
def attention_decide(api, token, element_id, verdict, group, groups, picks):
    body: dict = {"verdict": verdict}
    if group:
        body["group"] = group
    if groups is not None:
        body["groups"] = [g for g in groups.split(",") if g]
    if picks:
        card_picks = []
        for pick in picks:
            discriminator, provider, concerned = pick.split(",", 2)
            card_picks.append(
                {"discriminator": discriminator, "provider": provider, "concerned": concerned}
            )
        body["cardPicks"] = card_picks
    _request("POST", f"{api}/nsi/v1/attention/{element_id}/decision", token=token, body=body)
    click.echo("decided")


@attention.command("read")
@api_option
@token_option
@click.argument("element_id")
def attention_read(api, token, element_id):
    _request("POST", f"{api}/nsi/v1/attention/{element_id}/read", token=token)
    click.echo("read")


@main.command()
@api_option
@token_option
@click.option("--publisher", required=True)
def subscribe(api, token, publisher):
    out = _request("POST", f"{api}/nsi/v1/subscribe", token=token, body={"publisher": publisher})
    click.echo(json.dumps(out, sort_keys=True))


@main.command()
@api_option
@token_option
@click.option("--publisher", required=True)
def unsubscribe(api, token, publisher):
    _request("POST", f"{api}/nsi/v1/unsubscribe", token=token, body={"publisher": publisher})
    click.echo("unsubscribed")


@main.command()
@api_option
@token_option
@click.option("--consumer", required=True)
@click.option("--demand-deletion", is_flag=True)
def cancel(api, token, consumer, demand_deletion):
    _request(
        "POST",
        f"{api}/nsi/v1/cancel",
        token=token,
        body={"consumer": consumer, "demandDeletion": demand_deletion},
    )
    click.echo("cancelled")


@main.group()
def pif():
    """Personal information file."""


@pif.command("list")
@api_option
@token_option
@json_option
def pif_list(api, token, as_json):
    out = _request("GET", f"{api}/nsi/v1/pif", token=token)
    _print_cards(out["cards"], as_json)


@main.group()
def dif():
    """Distributed information folder (all foreign files)."""


@dif.command("list")
@api_option
@token_option
@json_option
def dif_list(api, token, as_json):
    out = _request("GET", f"{api}/nsi/v1/dif", token=token)
    _print_cards(out["cards"], as_json)


@main.group()
def fif():
    """One foreign information file."""


@fif.command("list")
@api_option
@token_option
@click.option("--concerned", required=True)
@json_option
def fif_list(api, token, concerned, as_json):
    out = _request("GET", f"{api}/nsi/v1/fif/{quote(concerned, safe='')}", token=token)
    _print_cards(out["cards"], as_json)


@main.command()
@api_option
@token_option
@click.option("--card-id", required=True, help="discriminator,provider,concerned")
@click.option("--groups", help="comma-separated groups; omit for all subscribers")
def publish(api, token, card_id, groups):
    discriminator, provider, concerned = card_id.split(",", 2)
    body = {
        "cardId": {"discriminator": discriminator, "provider": provider, "concerned": concerned},
        "groups": [g for g in groups.split(",") if g] if groups is not None else None,
    }
    out = _request("POST", f"{api}/nsi/v1/publish", token=token, body=body)
    click.echo(json.dumps(out, sort_keys=True))


@main.command("export")
@api_option
@token_option
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_cmd(api, token, out_dir):
    """Dump account state: card interchange files plus metadata.json."""
    bundle = _request("GET", f"{api}/nsi/v1/export", token=token)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "metadata.json").write_text(
        json.dumps({"account": bundle["account"], "metadata": bundle["metadata"]}, indent=1, sort_keys=True)
    )
    cards = bundle["cards"]
    for collection in ("staging", "pif"):
        directory = root / collection
        directory.mkdir(exist_ok=True)
        for index, card in enumerate(cards.get(collection, [])):
            (directory / f"{index:06d}.json").write_text(json.dumps(card, indent=1, sort_keys=True))
    for concerned, fif_cards in cards.get("fifs", {}).items():
        directory = root / "fif" / quote(concerned, safe="")
        directory.mkdir(parents=True, exist_ok=True)
        for index, card in enumerate(fif_cards):
            (directory / f"{index:06d}.json").write_text(json.dumps(card, indent=1, sort_keys=True))
    click.echo(str(root))


@main.command("import")
@api_option
@token_option
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
def import_cmd(api, token, in_dir):
    """Restore an account dump produced by export."""
    root = Path(in_dir)
    meta = json.loads((root / "metadata.json").read_text())
    bundle = {
        "account": meta["account"],
        "metadata": meta["metadata"],
        "cards": {"staging": [], "pif": [], "fifs": {}},
    }
    for collection in ("staging", "pif"):
        directory = root / collection
        if directory.is_dir():
            for path in sorted(directory.glob("*.json")):
                bundle["cards"][collection].append(json.loads(path.read_text()))
    fif_root = root / "fif"
    if fif_root.is_dir():
        for sub in sorted(fif_root.iterdir()):
            from urllib.parse import unquote

            cards = [json.loads(p.read_text()) for p in sorted(sub.glob("*.json"))]
            bundle["cards"]["fifs"][unquote(sub.name)] = cards
    out = _request("POST", f"{api}/nsi/v1/import", token=token, body=bundle)
    click.echo(json.dumps(out, sort_keys=True))


@main.group()
def scenario():
    """Scripted multi-node scenarios and invariant fuzzing."""


@scenario.command("run")
@click.argument("script", type=click.Path(exists=True))
@click.option("--one-node", is_flag=True, help="collapse all accounts onto a single node")
@click.option("--spawn", is_flag=True, help="run nodes as real subprocesses")
def scenario_run(script, one_node, spawn):
    from .scenario import load_script, run

    report = run(load_script(Path(script)), one_node=one_node, spawn=spawn)
    click.echo(report.render())
    sys.exit(0 if report.passed else 1)


@scenario.command("fuzz")
@click.option("--seed", required=True, type=int)
@click.option("--ops", required=True, type=int)
def scenario_fuzz(seed, ops):
    from .scenario import fuzz

    report = fuzz(seed=seed, op_count=ops)
    click.echo(report.render())
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
