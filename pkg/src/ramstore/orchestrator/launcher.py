"""Deployment transport: a small exec'd process that owns the host agents.

Forking host agents straight out of the orchestrating process couples
launch latency to that process's heap size (page-table copying makes
``fork`` of a large interpreter measurably slower), so per-host cost
would grow with whoever happens to embed the library. Real clusters
have the same shape: the head node does not fork its control shell into
every host, it execs a launcher (mpirun, pdsh) that does the fan-out.

This module is that launcher. ``deploy`` starts ``python -m
ramstore.orchestrator.launcher`` with framed-JSON stdio, sends it the
plan, and the launcher forks one agent per host from its own small,
freshly exec'd heap. Afterwards it relays phase commands down and agent
frames up, watches for child deaths, and reaps everything on shutdown.

Parent -> launcher commands:
    {"cmd": "launch", "plan": <plan doc>, "log_dir": <path>}
    {"cmd": "broadcast", "msg": <frame for every live agent>}
    {"cmd": "kill", "host": <host label>}
    {"cmd": "shutdown"}

Launcher -> parent envelopes:
    {"host": <label>, "frame": <agent frame or synthetic event>}
with synthetic frames {"event": "died", "exit": n, "log_tail": s} when
an agent process ends, and {"ok": false, "dead": true, ...} answering a
broadcast aimed at an agent that is already gone.
"""

from __future__ import annotations

import os
import select
import subprocess
import sys
import time
from functools import partial
from pathlib import Path

from ..errors import AgentFailure
from .agent import agent_body
from .launch import FrameBuffer, HostProcess, fork_host, pipe_send
from .plan import DeploymentPlan

_STDIN = 0
_STDOUT = 1
_LOOP_TICK = 0.05


def main() -> int:
    buffer = FrameBuffer()
    procs: dict[str, HostProcess] = {}
    announced: set[str] = set()

    def emit(host: str, frame: dict) -> None:
        pipe_send(_STDOUT, {"host": host, "frame": frame})

    while True:
        watch = [_STDIN] + [p.res_r for p in procs.values()
                            if not p.eof and not p.reaped]
        readable, _, _ = select.select(watch, [], [], _LOOP_TICK)

        by_fd = {p.res_r: p for p in procs.values()}
        for fd in readable:
            if fd == _STDIN:
                continue
            proc = by_fd[fd]
            data = os.read(fd, 1 << 16)
            if not data:
                proc.eof = True
                continue
            for frame in proc.buffer.feed(data):
                emit(proc.host, frame)

        # a child is only declared dead after its result pipe has been
        # drained, so no final frame is ever lost to the reaper
        for proc in procs.values():
            if proc.eof and not proc.reaped and proc.host not in announced:
                status = proc.reap(timeout=2.0)
                announced.add(proc.host)
                code = os.waitstatus_to_exitcode(status) if status is not None else None
                emit(proc.host, {"event": "died", "exit": code,
                                 "log_tail": proc.log_tail()})

        if _STDIN not in readable:
            continue
        data = os.read(_STDIN, 1 << 16)
        if not data:  # orchestrator is gone; take the agents along
            for proc in procs.values():
                proc.kill()
            return 1
        for command in buffer.feed(data):
            verb = command.get("cmd")
            if verb == "launch":
                plan = DeploymentPlan.from_doc(command["plan"])
                log_dir = Path(command["log_dir"])
                for index, host in enumerate(plan.hosts):
                    body = partial(agent_body, plan, host, index)
                    procs[host] = fork_host(host, body, log_dir / f"{host}.log")
            elif verb == "broadcast":
                for proc in procs.values():
                    if proc.eof or proc.reaped:
                        emit(proc.host, {"ok": False, "dead": True,
                                         "error": f"agent for {proc.host} already exited"})
                        continue
                    try:
                        proc.send(command["msg"])
                    except OSError:
                        proc.eof = True
                        emit(proc.host, {"ok": False, "dead": True,
                                         "error": f"agent for {proc.host} already exited"})
            elif verb == "kill":
                target = procs.get(command.get("host", ""))
                if target is not None:
                    target.kill()
            elif verb == "shutdown":
                for proc in procs.values():
                    if proc.reap(timeout=2.0) is None:
                        proc.kill()
                        proc.reap(timeout=2.0)
                    proc.close()
                return 0


class LauncherClient:
    """Orchestrator-side handle on one launcher process."""

    def __init__(self, plan: DeploymentPlan, log_dir: Path):
        package_root = Path(__file__).resolve().parents[2]
        env = os.environ.copy()
        env["PYTHONPATH"] = os.pathsep.join(
            [str(package_root)] + ([env["PYTHONPATH"]] if "PYTHONPATH" in env else [])
        )
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "ramstore.orchestrator.launcher"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, bufsize=0, env=env,
        )
        self.hosts = list(plan.hosts)
        self.dead: dict[str, dict] = {}
        self._buffer = FrameBuffer()
        self._inbox: list[dict] = []
        self._eof = False
        self.send({"cmd": "launch", "plan": plan.to_doc(), "log_dir": str(log_dir)})

    def send(self, doc: dict) -> None:
        try:
            pipe_send(self.proc.stdin.fileno(), doc)
        except (OSError, ValueError) as exc:
            raise AgentFailure("launcher", self._death_notice(str(exc))) from exc

    def collect(self, hosts: list[str], timeout: float) -> dict[str, dict]:
        """One outcome per host, exactly like collect_frames but relayed."""
        outcomes: dict[str, dict] = {}
        pending = set(hosts)
        deadline = time.monotonic() + timeout

        def absorb(envelope: dict) -> None:
            host = envelope.get("host")
            frame = envelope.get("frame", {})
            if frame.get("event") == "died":
                self.dead[host] = frame
                if host in pending:
                    outcomes[host] = _died_outcome(host, frame)
                    pending.discard(host)
                return
            if host in pending:
                outcomes[host] = _relayed_outcome(frame)
                pending.discard(host)

        while self._inbox and pending:
            absorb(self._inbox.pop(0))
        while pending and not self._eof:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            fd = self.proc.stdout.fileno()
            readable, _, _ = select.select([fd], [], [], remaining)
            if not readable:
                break
            data = os.read(fd, 1 << 16)
            if not data:
                self._eof = True
                break
            for envelope in self._buffer.feed(data):
                if pending:
                    absorb(envelope)
                else:
                    self._inbox.append(envelope)
        if self._eof and pending:
            notice = self._death_notice("stream ended")
            for host in sorted(pending):
                outcomes[host] = {"ok": False, "error": f"launcher died: {notice}"}
            pending.clear()
        for host in sorted(pending):
            outcomes[host] = {"ok": False, "timeout": True,
                              "error": f"host {host} sent nothing in {timeout}s"}
        return outcomes

    def broadcast(self, msg: dict) -> None:
        self.send({"cmd": "broadcast", "msg": msg})

    def kill_host(self, host: str) -> None:
        self.send({"cmd": "kill", "host": host})

    def shutdown(self, timeout: float) -> None:
        try:
            self.send({"cmd": "shutdown"})
        except AgentFailure:
            pass
        try:
            self.proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            self.kill()
        self._close_pipes()

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass
        self._close_pipes()

    def _close_pipes(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout, self.proc.stderr):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass

    def _death_notice(self, fallback: str) -> str:
        if self.proc.poll() is None:
            return fallback
        try:
            tail = self.proc.stderr.read() or b""
        except (OSError, ValueError):
            tail = b""
        text = tail[-2000:].decode(errors="replace").strip()
        return text or f"exit code {self.proc.returncode}"


def _relayed_outcome(frame: dict) -> dict:
    if frame.get("event") == "error":
        return {"ok": False, "error": frame.get("error", "unattributed failure")}
    if frame.get("dead"):
        return dict(frame)
    out = {"ok": True}
    out.update(frame)
    return out


def _died_outcome(host: str, frame: dict) -> dict:
    tail = frame.get("log_tail") or ""
    suffix = f"; log tail:\n{tail}" if tail else ""
    return {"ok": False, "dead": True,
            "error": f"agent process for {host} exited "
                     f"(code {frame.get('exit')}){suffix}"}


if __name__ == "__main__":
    sys.exit(main())
