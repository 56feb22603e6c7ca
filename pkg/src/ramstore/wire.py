"""Length-prefixed request/response framing over local stream sockets.

Every message is one frame: a 4-byte big-endian header length, a JSON
header (a versioned key/value document), then an optional raw payload
whose size the header declares in ``payload_len``. Each connection
carries exactly one request and one response.

Requests look like ``{"v": 1, "op": ..., "auth": <hex secret>, ...}``.
Responses are ``{"v": 1, "ok": true, ...}`` or
``{"v": 1, "ok": false, "error": <class name>, "message": ...}``.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from . import errors

WIRE_VERSION = 1

_MAX_HEADER = 8 << 20
_MAX_PAYLOAD = 4 << 30

Handler = Callable[[str, dict, bytes], "tuple[dict, bytes] | dict"]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        part = sock.recv(min(n - len(buf), 1 << 20))
        if not part:
            raise errors.ProtocolError("connection closed mid-frame")
        buf += part
    return bytes(buf)


def send_frame(sock: socket.socket, header: dict, payload: bytes = b"") -> None:
    doc = {"v": WIRE_VERSION}
    doc.update(header)
    if payload:
        doc["payload_len"] = len(payload)
    raw = json.dumps(doc, separators=(",", ":")).encode()
    sock.sendall(struct.pack(">I", len(raw)) + raw)
    if payload:
        sock.sendall(payload)


def recv_frame(sock: socket.socket) -> tuple[dict, bytes]:
    (hlen,) = struct.unpack(">I", _recv_exact(sock, 4))
    if hlen > _MAX_HEADER:
        raise errors.ProtocolError(f"header too large: {hlen}")
    header = json.loads(_recv_exact(sock, hlen))
    plen = int(header.get("payload_len", 0))
    if plen < 0 or plen > _MAX_PAYLOAD:
        raise errors.ProtocolError(f"bad payload length: {plen}")
    payload = _recv_exact(sock, plen) if plen else b""
    return header, payload


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host, int(port)


def request(
    address: str,
    op: str,
    fields: dict | None = None,
    payload: bytes = b"",
    *,
    auth: str | None = None,
    timeout: float = 30.0,
    unavailable: type[errors.StoreError] = errors.MonitorUnavailable,
) -> tuple[dict, bytes]:
    """One request/response round trip; raises the daemon's error by type."""
    header = {"op": op}
    if auth is not None:
        header["auth"] = auth
    if fields:
        header.update(fields)
    try:
        with socket.create_connection(parse_address(address), timeout=timeout) as sock:
            sock.settimeout(timeout)
            send_frame(sock, header, payload)
            resp, resp_payload = recv_frame(sock)
    except (OSError, errors.ProtocolError) as exc:
        raise unavailable(f"{op} to {address} failed: {exc}") from exc
    if not resp.get("ok"):
        raise errors.from_wire(resp.get("error", "StoreError"), resp.get("message", ""))
    return resp, resp_payload


class MessageServer:
    """Threaded one-request-per-connection server for the framing above.

    ``allowed_secrets(op)`` returns the set of secrets permitted to call
    ``op`` (or None when the op does not exist); when the callback itself
    is None the server is unauthenticated. Worker concurrency is capped by
    ``max_workers`` so a daemon never uses more threads than it was given.
    """

    def __init__(
        self,
        handler: Handler,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        max_workers: int = 8,
        allowed_secrets: Callable[[str], "set[str] | None"] | None = None,
        name: str = "message-server",
    ):
        self._handler = handler
        self._allowed_secrets = allowed_secrets
        self._name = name
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise errors.AddressInUse(f"cannot bind {host}:{port}: {exc}") from exc
        self._sock.listen(128)
        bound_host, bound_port = self._sock.getsockname()
        self.address = f"{bound_host}:{bound_port}"
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix=name)
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, name=name, daemon=True)

    def start(self) -> "MessageServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._stopping.is_set():
            return
        self._stopping.set()
        # A blocked accept() is not interrupted by close(); poke it awake.
        try:
            with socket.create_connection(parse_address(self.address), timeout=1.0):
                pass
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread.is_alive() and self._thread is not threading.current_thread():
            self._thread.join(timeout=5)
        self._pool.shutdown(wait=True)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            self._pool.submit(self._serve_one, conn)

    def _serve_one(self, conn: socket.socket) -> None:
        with conn:
            conn.settimeout(60.0)
            try:
                header, payload = recv_frame(conn)
            except (OSError, errors.ProtocolError):
                return
            try:
                op = header.get("op")
                if not isinstance(op, str):
                    raise errors.ProtocolError("missing op")
                self._check_auth(op, header)
                result = self._handler(op, header, payload)
                resp, resp_payload = result if isinstance(result, tuple) else (result, b"")
                out = {"ok": True}
                out.update(resp)
            except errors.StoreError as exc:
                name, message = exc.to_wire()
                out, resp_payload = {"ok": False, "error": name, "message": message}, b""
            except Exception as exc:  # noqa: BLE001 - daemon must answer, not die
                out, resp_payload = {"ok": False, "error": "StoreError", "message": repr(exc)}, b""
            try:
                send_frame(conn, out, resp_payload)
            except OSError:
                pass

    def _check_auth(self, op: str, header: dict) -> None:
        if self._allowed_secrets is None:
            return
        allowed = self._allowed_secrets(op)
        if allowed is None:
            raise errors.ProtocolError(f"unknown op {op!r}")
        if header.get("auth") not in allowed:
            raise errors.AuthFailure(f"bad or missing secret for {op!r}")
