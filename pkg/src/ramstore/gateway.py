"""HTTP object gateway: pools as buckets over a tiny REST surface.

Routes:
    PUT    /{pool}/{object}      store the request body       -> 201
    GET    /{pool}/{object}      fetch the object             -> 200
    DELETE /{pool}/{object}      remove the object            -> 204
    GET    /{pool}?list          "name<TAB>size" rows         -> 200

Every request must carry ``Authorization: Bearer <client secret>``.
Bodies are buffered whole (the store is transient and desk-scale), with
a hard cap; full request signing is deliberately out of scope.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler
from urllib.parse import unquote, urlparse

from . import wire
from .control_plane import MonitorClient
from .errors import (
    AddressInUse,
    AuthFailure,
    ChecksumMismatch,
    MonitorUnavailable,
    NoSpace,
    NoSuchObject,
    NotEnoughOsds,
    OsdUnavailable,
    ProtocolError,
    StoreError,
    UnknownPool,
)
from .store import StoreClient

log = logging.getLogger("ramstore.gateway")

DEFAULT_MAX_BODY = 256 * 1024 * 1024

# Total mapping from error type to HTTP status; anything not listed is a 500.
STATUS_BY_ERROR = {
    NoSuchObject: 404,
    UnknownPool: 404,
    NoSpace: 507,
    AuthFailure: 403,
    ProtocolError: 400,
    NotEnoughOsds: 503,
    MonitorUnavailable: 503,
    OsdUnavailable: 503,
    ChecksumMismatch: 502,
}


def status_for(error: StoreError) -> int:
    for cls in type(error).__mro__:
        if cls in STATUS_BY_ERROR:
            return STATUS_BY_ERROR[cls]
    return 500


@dataclass
class GatewaySpec:
    listen_address: str
    monitor_address: str
    client_secret: str
    max_body_bytes: int = DEFAULT_MAX_BODY


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "ramstore-gateway"

    # the server instance injects these
    store: StoreClient
    secret: str
    max_body: int

    def log_message(self, fmt, *args):  # noqa: N802 - stdlib naming
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing

    def _reply(self, status: int, body: bytes = b"", content_type: str = "text/plain") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _reply_error(self, status: int, message: str) -> None:
        self._reply(status, (message + "\n").encode())

    def _authorized(self) -> bool:
        header = self.headers.get("Authorization", "")
        return header == f"Bearer {self.secret}"

    def _route(self) -> tuple[str, str | None, bool]:
        """Returns (pool, object_name or None, wants_listing)."""
        parsed = urlparse(self.path)
        parts = [unquote(p) for p in parsed.path.strip("/").split("/") if p]
        wants_list = "list" in parsed.query.split("&")
        if len(parts) == 1:
            return parts[0], None, wants_list
        if len(parts) == 2:
            return parts[0], parts[1], False
        raise NoSuchObject(f"unroutable path {parsed.path!r}")

    def _dispatch(self, method: str) -> None:
        if not self._authorized():
            self._reply_error(403, "missing or invalid bearer token")
            return
        try:
            pool, name, wants_list = self._route()
            if method == "GET" and name is None and wants_list:
                rows = self.store.list_objects(pool)
                body = "".join(f"{n}\t{size}\n" for n, size in rows).encode()
                self._reply(200, body)
            elif method == "GET" and name is not None:
                data, _ = self.store.get_object(pool, name)
                self._reply(200, data, content_type="application/octet-stream")
            elif method == "PUT" and name is not None:
                self._put(pool, name)
            elif method == "DELETE" and name is not None:
                self.store.delete_object(pool, name)
                self._reply(204)
            else:
                self._reply_error(404, f"no route for {method} {self.path}")
        except StoreError as exc:
            self._reply_error(status_for(exc), str(exc))
        except Exception as exc:  # noqa: BLE001 - the gateway must answer
            log.exception("internal error handling %s %s", method, self.path)
            self._reply_error(500, repr(exc))

    def _put(self, pool: str, name: str) -> None:
        length_header = self.headers.get("Content-Length")
        if length_header is None:
            self._reply_error(411, "content-length required")
            return
        length = int(length_header)
        if length > self.max_body:
            self._reply_error(413, f"body exceeds {self.max_body} byte cap")
            return
        body = self.rfile.read(length)
        self.store.put_object(pool, name, body)
        self._reply(201)

    def do_GET(self):  # noqa: N802
        self._dispatch("GET")

    def do_PUT(self):  # noqa: N802
        self._dispatch("PUT")

    def do_DELETE(self):  # noqa: N802
        self._dispatch("DELETE")


class _GatewayHTTPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class Gateway:
    """Running HTTP front end over one cluster's client credentials."""

    def __init__(self, spec: GatewaySpec):
        self.spec = spec
        monitor = MonitorClient(spec.monitor_address, spec.client_secret)
        store = StoreClient(monitor, spec.client_secret)

        handler = type(
            "BoundHandler",
            (_Handler,),
            {"store": store, "secret": spec.client_secret, "max_body": spec.max_body_bytes},
        )
        host, port = wire.parse_address(spec.listen_address)
        try:
            self._httpd = _GatewayHTTPServer((host, port), handler)
        except OSError as exc:
            raise AddressInUse(f"cannot bind gateway to {spec.listen_address}: {exc}") from exc
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="gateway", daemon=True
        )

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"{host}:{port}"

    @property
    def url(self) -> str:
        return f"http://{self.address}"

    def start(self) -> "Gateway":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)


def serve(spec: GatewaySpec) -> Gateway:
    """Bind and start a gateway; the handle's .stop() tears it down."""
    return Gateway(spec).start()
