"""Process launcher for simulated hosts.

Each host is a forked child process connected to the parent by two
pipes: a command pipe (parent to child) and a result pipe (child to
parent), both carrying length-prefixed JSON frames. Children are all
forked before any result is awaited, so host work genuinely overlaps —
there is no one-host-at-a-time round trip anywhere.
"""

from __future__ import annotations

import json
import os
import select
import signal
import struct
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

_FRAME_HEADER = struct.Struct(">I")
_MAX_FRAME = 1 << 20


def pipe_send(fd: int, doc: dict) -> None:
    raw = json.dumps(doc, separators=(",", ":")).encode()
    if len(raw) > _MAX_FRAME:
        raise ValueError(f"frame too large: {len(raw)}")
    os.write(fd, _FRAME_HEADER.pack(len(raw)) + raw)


class FrameBuffer:
    """Reassembles framed JSON documents from a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf += data
        frames = []
        while len(self._buf) >= _FRAME_HEADER.size:
            (length,) = _FRAME_HEADER.unpack_from(self._buf)
            end = _FRAME_HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append(json.loads(bytes(self._buf[_FRAME_HEADER.size:end])))
            del self._buf[:end]
        return frames


def read_command(fd: int, timeout: float) -> dict | None:
    """Child side: wait for one framed command; None on timeout, EOFError
    when the parent has gone away."""
    ready, _, _ = select.select([fd], [], [], timeout)
    if not ready:
        return None
    head = os.read(fd, _FRAME_HEADER.size)
    if not head:
        raise EOFError("command pipe closed")
    (length,) = _FRAME_HEADER.unpack(head)
    raw = b""
    while len(raw) < length:
        part = os.read(fd, length - len(raw))
        if not part:
            raise EOFError("command pipe closed mid-frame")
        raw += part
    return json.loads(raw)


@dataclass
class HostProcess:
    host: str
    pid: int
    cmd_w: int
    res_r: int
    log_path: Path | None
    buffer: FrameBuffer = field(default_factory=FrameBuffer)
    frames: list[dict] = field(default_factory=list)
    eof: bool = False
    reaped: bool = False

    def send(self, doc: dict) -> None:
        pipe_send(self.cmd_w, doc)

    def kill(self) -> None:
        if not self.reaped:
            try:
                os.kill(self.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass

    def reap(self, timeout: float = 5.0) -> int | None:
        """Wait for exit (polling); returns the status or None on timeout."""
        if self.reaped:
            return 0
        deadline = time.monotonic() + timeout
        while True:
            pid, status = os.waitpid(self.pid, os.WNOHANG)
            if pid == self.pid:
                self.reaped = True
                self.close()
                return status
            if time.monotonic() >= deadline:
                return None
            time.sleep(0.002)

    def close(self) -> None:
        for fd in (self.cmd_w, self.res_r):
            try:
                os.close(fd)
            except OSError:
                pass

    def log_tail(self, max_bytes: int = 2000) -> str:
        if self.log_path is None or not Path(self.log_path).exists():
            return ""
        raw = Path(self.log_path).read_bytes()
        return raw[-max_bytes:].decode(errors="replace")


def _child_hygiene(keep: set[int], log_path: Path | None) -> None:
    """Detach the child from the parent's world: own stdio, no stray fds."""
    out_fd = os.open(log_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644) \
        if log_path else os.open(os.devnull, os.O_WRONLY)
    in_fd = os.open(os.devnull, os.O_RDONLY)
    os.dup2(in_fd, 0)
    os.dup2(out_fd, 1)
    os.dup2(out_fd, 2)
    for name in os.listdir("/proc/self/fd"):
        fd = int(name)
        if fd > 2 and fd not in keep:
            try:
                os.close(fd)
            except OSError:
                pass
    # the parent's sys.stdout/sys.stderr may wrap fds that no longer
    # exist here (test harnesses capture them); rebind onto the log
    import io
    sys.stdout = io.TextIOWrapper(io.FileIO(1, "w", closefd=False),
                                  line_buffering=True)
    sys.stderr = io.TextIOWrapper(io.FileIO(2, "w", closefd=False),
                                  line_buffering=True)


def fork_host(
    host: str,
    body: Callable[[int, int], None],
    log_path: Path | None = None,
) -> HostProcess:
    """Fork one host process running ``body(cmd_r, res_w)``.

    The body owns the child from there on and must exit via os._exit;
    if it raises, an error frame is emitted so the parent can attribute
    the failure.
    """
    cmd_r, cmd_w = os.pipe()
    res_r, res_w = os.pipe()
    pid = os.fork()
    if pid == 0:
        try:
            os.close(cmd_w)
            os.close(res_r)
            _child_hygiene(keep={cmd_r, res_w}, log_path=log_path)
            body(cmd_r, res_w)
            os._exit(0)
        except SystemExit:
            raise
        except BaseException:  # noqa: BLE001 - report, then die
            try:
                pipe_send(res_w, {"event": "error", "host": host,
                                  "error": traceback.format_exc(limit=20)})
            except OSError:
                pass
            try:
                traceback.print_exc()
            except OSError:
                pass
            os._exit(70)
    os.close(cmd_r)
    os.close(res_w)
    return HostProcess(host, pid, cmd_w, res_r, log_path)


def collect_frames(procs: list[HostProcess], timeout: float) -> dict[str, dict]:
    """Await one frame from every host; all were started before this.

    Returns host -> outcome. A dead child yields ok=False with its log
    tail; a silent one yields ok=False with timeout=True. Failures never
    cancel the other hosts' collection.
    """
    outcomes: dict[str, dict] = {}
    pending: dict[int, HostProcess] = {}
    for proc in procs:
        if proc.frames:
            outcomes[proc.host] = _as_outcome(proc.frames.pop(0))
        elif proc.eof:
            outcomes[proc.host] = _dead_outcome(proc)
        else:
            pending[proc.res_r] = proc

    deadline = time.monotonic() + timeout
    while pending:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            break
        ready, _, _ = select.select(list(pending), [], [], remaining)
        for fd in ready:
            proc = pending[fd]
            data = os.read(fd, 1 << 16)
            if not data:
                proc.eof = True
                outcomes[proc.host] = _dead_outcome(proc)
                del pending[fd]
                continue
            frames = proc.buffer.feed(data)
            if frames:
                outcomes[proc.host] = _as_outcome(frames.pop(0))
                proc.frames.extend(frames)
                del pending[fd]
    for proc in pending.values():
        outcomes[proc.host] = {"ok": False, "timeout": True,
                               "error": f"host {proc.host} sent nothing in {timeout}s"}
    return outcomes


def _as_outcome(frame: dict) -> dict:
    if frame.get("event") == "error":
        return {"ok": False, "error": frame.get("error", "unattributed failure")}
    out = {"ok": True}
    out.update(frame)
    return out


def _dead_outcome(proc: HostProcess) -> dict:
    proc.reap(timeout=1.0)
    tail = proc.log_tail()
    suffix = f"; log tail:\n{tail}" if tail else ""
    return {"ok": False, "error": f"agent process for {proc.host} exited early{suffix}"}


def launch_parallel(
    hosts: list[str],
    action: Callable[[str], dict | None],
    timeout: float = 30.0,
    log_dir: Path | None = None,
) -> dict[str, dict]:
    """Run one self-contained action per host, all concurrently.

    Every child is forked before any result is read. Per-host outcomes
    are attributed individually; a failing or hanging host never cancels
    its peers. Hung children are killed on the way out.
    """
    procs: list[HostProcess] = []
    for host in hosts:
        def body(cmd_r: int, res_w: int, _host: str = host) -> None:
            result = action(_host)
            doc = {"event": "done", "host": _host}
            if isinstance(result, dict):
                doc.update(result)
            pipe_send(res_w, doc)
            os._exit(0)

        log_path = Path(log_dir) / f"{host}.log" if log_dir else None
        procs.append(fork_host(host, body, log_path))

    outcomes = collect_frames(procs, timeout)
    for proc in procs:
        if outcomes[proc.host].get("timeout"):
            proc.kill()
        proc.reap(timeout=2.0)
        proc.close()
    return outcomes
