"""NSI HTTP surface: Soul operations, transfer endpoints, console assets.

Account selection is by per-account bearer token; the transfer endpoints and
/healthz are unauthenticated (peer traffic). Domain errors map to their HTTP
status with a structured {code, field?, reason} body.

Endpoints are plain (sync) functions on purpose: FastAPI runs them on worker
threads, so a handler blocking on a cross-node HTTP send never stalls the
event loop that has to keep accepting incoming peer traffic.
"""

from __future__ import annotations

import threading
from urllib.parse import unquote

from fastapi import Body, Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import preparation
from .cards import card_to_json
from .errors import BindFailure, ConfigError, DeusError, UnknownAccount, ValidationError
from .identity import AccountId, parse_account_id
from .node import DeusNode
from .store import AccountMode, StrategyConfig
from .transfer import Envelope


def build_app(node: DeusNode) -> FastAPI:
    app = FastAPI(title="deus-node", docs_url=None, redoc_url=None)

    @app.exception_handler(DeusError)
    async def deus_error_handler(request: Request, exc: DeusError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_body())

    @app.exception_handler(RequestValidationError)
    async def malformed_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "validation", "reason": str(exc.errors()[:1])}
        )

    def account_from_token(request: Request) -> AccountId:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise ValidationError("missing bearer token", field="authorization")
        account = node.account_for_token(header[7:].strip())
        if account is None:
            raise UnknownAccount("token does not select an account")
        return account

    def require_admin(request: Request) -> None:
        header = request.headers.get("authorization", "")
        token = header[7:].strip() if header.lower().startswith("bearer ") else ""
        if not node.config.admin_token or token != node.config.admin_token:
            raise UnknownAccount("admin token required")

    # ------------------------------------------------------------------
    # health & transfer endpoints (peer-facing, unauthenticated)
    # ------------------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return {"node": node.config.node_name}

    @app.post("/deus/tp/http/v1/message")
    def receive_message(payload: dict = Body(...)):
        envelope = Envelope.from_json(payload)
        node.receive_envelope(envelope)
        return {"status": "accepted"}

    @app.get("/deus/tp/v1/protocols")
    def protocols(account: str):
        who = parse_account_id(account)
        if not node.store.has_account(who):
            raise UnknownAccount(f"{who} is not hosted on this node")
        return [
            {"protocol": name, "priority": priority}
            for name, priority in node.transfer.local_priorities(for_local_peer=False)
        ]

    @app.get("/deus/tp/v1/resolve")
    def resolve(account: str, protocol: str):
        who = parse_account_id(account)
        if node.store.has_account(who) and protocol == "http":
            return {"address": node.config.base_url}
        return {"address": node.bindings.resolve_address(who, protocol)}

    # ------------------------------------------------------------------
    # NSI API
    # ------------------------------------------------------------------

    @app.post("/nsi/v1/contribute")
    def contribute(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        card = preparation.parse_contribution(payload, account)
        receipt = node.contribute(account, card)
        return {
            "envelopeId": receipt.envelope_id,
            "protocol": receipt.protocol,
            "cardId": card.id.to_json(),
        }

    @app.get("/nsi/v1/attention")
    def attention(includeRead: bool = False, account: AccountId = Depends(account_from_token)):
        elements = node.barker.list_attention(account, include_read=includeRead)
        return {"elements": [e.to_json() for e in elements]}

    @app.get("/nsi/v1/attention/history")
    def attention_history(account: AccountId = Depends(account_from_token)):
        return {"records": [r.to_json() for r in node.barker.history(account)]}

    @app.post("/nsi/v1/attention/{element_id}/decision")
    def decide(
        element_id: str,
        payload: dict = Body(...),
        account: AccountId = Depends(account_from_token),
    ):
        verdict, args = preparation.parse_decision(payload)
        node.decide_attention(account, element_id, verdict, args)
        return {"status": "decided"}

    @app.post("/nsi/v1/attention/{element_id}/read")
    def mark_read(element_id: str, account: AccountId = Depends(account_from_token)):
        node.barker.mark_read(account, element_id)
        return {"status": "read"}

    @app.post("/nsi/v1/subscribe")
    def subscribe(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        publisher = preparation.parse_uri_field(payload, "publisher")
        receipt = node.subscribe(account, publisher)
        return {"envelopeId": receipt.envelope_id, "protocol": receipt.protocol}

    @app.post("/nsi/v1/unsubscribe")
    def unsubscribe(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        publisher = preparation.parse_uri_field(payload, "publisher")
        node.unsubscribe(account, publisher)
        return {"status": "unsubscribed"}

    @app.post("/nsi/v1/cancel")
    def cancel(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        consumer, demand = preparation.parse_cancel(payload)
        node.cancel_subscription(account, consumer, demand)
        return {"status": "cancelled"}

    @app.get("/nsi/v1/pif")
    def pif(account: AccountId = Depends(account_from_token)):
        return {"cards": [card_to_json(c) for c in node.store.get(account).list_pif()]}

    @app.get("/nsi/v1/staging")
    def staging(account: AccountId = Depends(account_from_token)):
        return {"cards": [card_to_json(c) for c in node.store.get(account).list_staging()]}

    @app.get("/nsi/v1/dif")
    def dif(account: AccountId = Depends(account_from_token)):
        return {"cards": [card_to_json(c) for c in node.consumer.read_dif(account)]}

    @app.get("/nsi/v1/fif/{concerned:path}")
    def fif(concerned: str, account: AccountId = Depends(account_from_token)):
        who = parse_account_id(unquote(concerned))
        return {"cards": [card_to_json(c) for c in node.consumer.read_fif(account, who)]}

    @app.post("/nsi/v1/publish")
    def publish(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        card_id, groups = preparation.parse_publish(payload)
        report = node.publish(account, card_id, groups)
        return {
            "delivered": report.delivered,
            "failed": report.failed,
            "entries": [
                {
                    "receiver": e.receiver.uri,
                    "ok": e.ok,
                    "protocol": e.protocol,
                    "error": e.error,
                }
                for e in report.entries
            ],
        }

    @app.get("/nsi/v1/export")
    def export_state(account: AccountId = Depends(account_from_token)):
        return node.export_account(account)

    @app.post("/nsi/v1/import")
    def import_state(payload: dict = Body(...), account: AccountId = Depends(account_from_token)):
        counts = node.import_account(account, payload)
        return {"imported": counts}

    # ------------------------------------------------------------------
    # admin (provisioning)
    # ------------------------------------------------------------------

    @app.get("/nsi/v1/accounts")
    def list_accounts(request: Request):
        require_admin(request)
        out = []
        for account in node.store.accounts():
            handle = node.store.get(account)
            out.append(
                {
                    "account": account.uri,
                    "mode": handle.mode().value,
                    "strategy": handle.strategy().to_json(),
                }
            )
        return {"accounts": out}

    @app.post("/nsi/v1/accounts")
    def provision(request: Request, payload: dict = Body(...)):
        require_admin(request)
        account = preparation.parse_uri_field(payload, "account")
        try:
            mode = AccountMode(payload.get("mode", "interactive"))
        except ValueError as exc:
            raise ValidationError(f"bad mode: {exc}", field="mode") from exc
        strategy = StrategyConfig.from_json(payload.get("strategy", {"kind": "nothing"}))
        token = payload.get("token")
        if not isinstance(token, str) or not token:
            raise ValidationError("token is required", field="token")
        sign_key = None
        if payload.get("signKeyBase64"):
            import base64 as b64

            from .identity import ED25519, SignKey

            sign_key = SignKey(ED25519, b64.b64decode(payload["signKeyBase64"]))
        node.provision_account_dynamic(
            account, mode, strategy, token, sign_key=sign_key, options=payload.get("options")
        )
        return {"status": "provisioned", "account": account.uri}

    if node.config.console_dir is not None and node.config.console_dir.is_dir():
        app.mount("/console", StaticFiles(directory=node.config.console_dir, html=True))

    return app


class NodeServer:
    """A node plus its uvicorn server, runnable in-process on a thread."""

    def __init__(self, node: DeusNode):
        import uvicorn

        self.node = node
        self.app = build_app(node)
        self._config = uvicorn.Config(
            self.app,
            host=node.config.listen_host,
            port=node.config.listen_port,
            log_level="warning",
            access_log=False,
        )
        self._server = uvicorn.Server(self._config)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        servers = getattr(self._server, "servers", None)
        if servers:
            return servers[0].sockets[0].getsockname()[1]
        return self.node.config.listen_port

    @property
    def base_url(self) -> str:
        return f"http://{self.node.config.listen_host}:{self.port}"

    def start(self, timeout: float = 10.0) -> None:
        import time

        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if time.monotonic() > deadline:
                raise BindFailure(
                    f"server on {self.node.config.listen_host}:{self.node.config.listen_port} "
                    "did not start"
                )
            if not self._thread.is_alive():
                raise BindFailure("server thread died during startup")
            time.sleep(0.01)

    def stop(self) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)
        self.node.close()


def serve(config) -> None:
    """Run a node in the foreground (the CLI `serve` entry point)."""
    if not config.accounts:
        raise ConfigError("a serving node needs at least one account")
    node = DeusNode(config)
    import uvicorn

    app = build_app(node)
    try:
        uvicorn.run(
            app,
            host=config.listen_host,
            port=config.listen_port,
            log_level="info",
            access_log=False,
        )
    except OSError as exc:
        raise BindFailure(f"cannot bind {config.listen_host}:{config.listen_port}: {exc}") from exc
    finally:
        node.close()
