"""Deploy and remove transient clusters in parallel phases.

Deploy: (1) bootstrap the monitor on the head process, (2) write key
files and the cluster descriptor into the shared directory, (3) verify
the manager/metrics surface, (4) fork every host agent and wait at the
barrier for all of them to report ready, (5) create the requested pool
or gateway. A failed deploy aborts and auto-removes partial state —
half a transient cluster is worth nothing.

Remove walks the reverse order: stop OSDs and clear per-host runtime
folders, unregister OSDs, destroy devices, then clean the shared
directory and shut down gateway and monitor (the monitor via its own
wire protocol, confirming the port actually closed).
"""

from __future__ import annotations

import shutil
import socket
import threading
import time
from contextlib import contextmanager
from pathlib import Path

from .. import control_plane as cp
from ..errors import (
    AgentFailure,
    DuplicateCluster,
    MonitorUnavailable,
    PhaseTimeout,
    SharedDirUnwritable,
    StoreError,
    UnknownCluster,
)
from ..gateway import Gateway, GatewaySpec, serve as serve_gateway
from ..util import write_json_atomic
from ..wire import parse_address
from .agent import descriptor_path, runtime_root
from .launcher import LauncherClient
from .plan import DeploymentPlan, DeploymentReport


class Deployment:
    def __init__(self, plan: DeploymentPlan, server: cp.MonitorServer,
                 keyring: cp.Keyring):
        self.plan = plan
        self.server = server
        self.keyring = keyring
        self.launcher: LauncherClient | None = None
        self.osd_ids: dict[str, list[int]] = {}
        self.agent_pids: dict[str, int] = {}
        self.gateway: Gateway | None = None
        self.busy = threading.Lock()


_DEPLOYMENTS: dict[str, Deployment] = {}
_REGISTRY_LOCK = threading.Lock()


@contextmanager
def _phase(phases: list, name: str):
    started = time.monotonic()
    yield
    phases.append((name, time.monotonic() - started))


def _check_shared_dir(shared: Path) -> None:
    probe = shared / ".probe"
    try:
        probe.write_text("w")
        probe.unlink()
    except OSError as exc:
        raise SharedDirUnwritable(f"cannot write {shared}: {exc}") from exc


def _broadcast(dep: Deployment, cmd: str, timeout: float,
               phase: str) -> dict[str, dict]:
    dep.launcher.broadcast({"cmd": cmd})
    outcomes = dep.launcher.collect(dep.plan.hosts, timeout)
    lagging = sorted(h for h, o in outcomes.items() if o.get("timeout"))
    if lagging:
        raise PhaseTimeout(phase, lagging)
    return outcomes


def deploy(plan: DeploymentPlan,
           liveness_window_seconds: float = cp.DEFAULT_LIVENESS_WINDOW,
           ) -> DeploymentReport:
    plan.validate()
    shared = Path(plan.shared_dir)
    if not shared.is_dir():
        raise SharedDirUnwritable(f"{shared} is not a directory")
    _check_shared_dir(shared)
    with _REGISTRY_LOCK:
        if plan.cluster_id in _DEPLOYMENTS:
            raise DuplicateCluster(f"cluster {plan.cluster_id!r} is already deployed")

    phases: list[tuple[str, float]] = []
    started = time.monotonic()

    with _phase(phases, "bootstrap_monitor"):
        server = cp.bootstrap_monitor(
            plan.cluster_id, liveness_window_seconds=liveness_window_seconds
        )
    dep = Deployment(plan, server, None)  # keyring filled in below
    try:
        with _phase(phases, "write_keyring"):
            dep.keyring = server.monitor.issue_keyring()
            dep.keyring.write_dir(shared, plan.cluster_id)
            descriptor = {
                "cluster_id": plan.cluster_id,
                "monitor_address": server.address,
            }
            write_json_atomic(descriptor_path(shared, plan.cluster_id), descriptor)
            (runtime_root(shared, plan.cluster_id) / "logs").mkdir(parents=True)

        with _phase(phases, "start_manager"):
            manager = cp.MonitorClient(server.address, dep.keyring.secret("manager"))
            report = manager.metrics()
            if report["epoch"] < 1:
                raise AgentFailure("head", "manager surface returned a bad epoch")

        with _phase(phases, "launch_agents"):
            log_dir = runtime_root(shared, plan.cluster_id) / "logs"
            dep.launcher = LauncherClient(plan, log_dir)
            outcomes = dep.launcher.collect(plan.hosts, plan.phase_timeout_seconds)
            lagging = sorted(h for h, o in outcomes.items() if o.get("timeout"))
            if lagging:
                raise PhaseTimeout("launch_agents", lagging)
            for host in plan.hosts:
                outcome = outcomes[host]
                if not outcome.get("ok"):
                    raise AgentFailure(host, outcome.get("error", "no details"))
                dep.osd_ids[host] = list(outcome.get("osds", []))
                dep.agent_pids[host] = outcome.get("pid", 0)

        final_name = ("create_pool" if plan.pool else
                      "start_gateway" if plan.gateway else "finalize")
        with _phase(phases, final_name):
            if plan.pool:
                creator = cp.MonitorClient(server.address, dep.keyring.secret("client"))
                creator.create_pool(plan.pool)
                _smoke_test_pool(server.address, dep.keyring, plan.pool.name)
            elif plan.gateway:
                dep.gateway = serve_gateway(GatewaySpec(
                    listen_address=plan.gateway["listen_address"],
                    monitor_address=server.address,
                    client_secret=dep.keyring.secret("client"),
                ))
            else:
                cmap = server.monitor.get_map()
                expected = plan.total_osds()
                if len(cmap.up_osds()) != expected:
                    raise AgentFailure(
                        "head", f"{len(cmap.up_osds())} of {expected} OSDs up"
                    )
    except BaseException:
        _force_teardown(dep)
        raise

    with _REGISTRY_LOCK:
        _DEPLOYMENTS[plan.cluster_id] = dep
    per_host = {host: "ok" for host in plan.hosts}
    return DeploymentReport(
        cluster_id=plan.cluster_id,
        action="deploy",
        phases=phases,
        per_host=per_host,
        total_seconds=time.monotonic() - started,
    )


def remove(cluster_id: str) -> DeploymentReport:
    with _REGISTRY_LOCK:
        dep = _DEPLOYMENTS.get(cluster_id)
    if dep is None:
        raise UnknownCluster(f"cluster {cluster_id!r} is not deployed")
    if not dep.busy.acquire(blocking=False):
        raise DuplicateCluster(f"cluster {cluster_id!r} is being orchestrated already")

    plan = dep.plan
    shared = Path(plan.shared_dir)
    timeout = plan.phase_timeout_seconds
    phases: list[tuple[str, float]] = []
    per_host: dict[str, str] = {}
    started = time.monotonic()
    try:
        with _phase(phases, "stop_osds"):
            outcomes = _broadcast(dep, "stop_osds", timeout, "stop_osds")
            for host, outcome in outcomes.items():
                per_host[host] = "ok" if outcome.get("ok") else outcome.get("error", "?")

        with _phase(phases, "unregister_osds"):
            outcomes = _broadcast(dep, "unregister_osds", timeout, "unregister_osds")
            # agents that died earlier cannot unregister themselves
            fallback = cp.MonitorClient(dep.server.address, dep.keyring.secret("osd"))
            for host, outcome in outcomes.items():
                if not outcome.get("ok"):
                    for osd_id in dep.osd_ids.get(host, []):
                        try:
                            fallback.unregister_osd(osd_id)
                        except StoreError:
                            pass

        with _phase(phases, "destroy_devices"):
            outcomes = _broadcast(dep, "destroy_devices", timeout, "destroy_devices")
            for host, outcome in outcomes.items():
                if outcome.get("ok") and outcome.get("reserved_bytes", 0) != 0:
                    per_host[host] = f"leaked {outcome['reserved_bytes']} reserved bytes"
            dep.launcher.shutdown(timeout)

        with _phase(phases, "cleanup_shared"):
            _cleanup_shared(shared, cluster_id)
            if dep.gateway is not None:
                dep.gateway.stop()
            _shutdown_monitor(dep)
    except BaseException:
        _force_teardown(dep)
        raise
    finally:
        with _REGISTRY_LOCK:
            _DEPLOYMENTS.pop(cluster_id, None)
        dep.busy.release()

    return DeploymentReport(
        cluster_id=cluster_id,
        action="remove",
        phases=phases,
        per_host=per_host,
        total_seconds=time.monotonic() - started,
    )


def status(cluster_id: str) -> dict:
    with _REGISTRY_LOCK:
        dep = _DEPLOYMENTS.get(cluster_id)
    if dep is None:
        return {"cluster_id": cluster_id, "deployed": False}
    summary: dict = {
        "cluster_id": cluster_id,
        "deployed": True,
        "monitor_address": dep.server.address,
        "hosts": list(dep.plan.hosts),
    }
    try:
        cmap = cp.MonitorClient(
            dep.server.address, dep.keyring.secret("client"), timeout=2
        ).get_map()
        up = len(cmap.up_osds())
        summary.update(
            epoch=cmap.epoch,
            osds_up=up,
            osds_down=len(cmap.osds) - up,
            pools=[p.name for p in cmap.pools],
        )
    except MonitorUnavailable:
        summary["monitor_unreachable"] = True
    if dep.gateway is not None:
        summary["gateway"] = {
            "address": dep.gateway.address,
            "alive": _port_open(dep.gateway.address),
        }
    return summary


def _port_open(address: str, timeout: float = 0.5) -> bool:
    try:
        with socket.create_connection(parse_address(address), timeout=timeout):
            return True
    except OSError:
        return False


def _cleanup_shared(shared: Path, cluster_id: str) -> None:
    for role in cp.ROLES:
        (shared / f"{cluster_id}.{role}.key").unlink(missing_ok=True)
    descriptor_path(shared, cluster_id).unlink(missing_ok=True)
    shutil.rmtree(runtime_root(shared, cluster_id), ignore_errors=True)


def _shutdown_monitor(dep: Deployment) -> None:
    """Order shutdown over the wire, then wait for the port to close."""
    client = cp.MonitorClient(
        dep.server.address, dep.keyring.secret("monitor"), timeout=2
    )
    try:
        client.shutdown()
    except MonitorUnavailable:
        dep.server.stop()
        return
    deadline = time.monotonic() + 5.0
    while time.monotonic() < deadline:
        if not _port_open(dep.server.address, timeout=0.2):
            return
        time.sleep(0.01)
    dep.server.stop()  # belt and braces; stop() is idempotent


def kill_agent(cluster_id: str, host: str) -> None:
    """Fault injection: hard-kill one host's agent process."""
    with _REGISTRY_LOCK:
        dep = _DEPLOYMENTS.get(cluster_id)
    if dep is None:
        raise UnknownCluster(f"cluster {cluster_id!r} is not deployed")
    if host not in dep.plan.hosts:
        raise AgentFailure(host, "host is not part of the deployment")
    dep.launcher.kill_host(host)


def _smoke_test_pool(monitor_address: str, keyring: cp.Keyring, pool: str) -> None:
    """Round-trip one canary object so deploy never hands over a broken

    data path; the canary is deleted again and leaves no trace."""
    from ..store import StoreClient

    secret = keyring.secret("client")
    client = StoreClient(cp.MonitorClient(monitor_address, secret), secret)
    payload = b"transient-cluster-canary"
    client.put_object(pool, ".deploy-canary", payload)
    data, _ = client.get_object(pool, ".deploy-canary")
    if data != payload:
        raise AgentFailure("head", "canary object came back corrupted")
    client.delete_object(pool, ".deploy-canary")


def _force_teardown(dep: Deployment) -> None:
    """Best-effort cleanup for aborted deploys and failed removals."""
    if dep.launcher is not None:
        try:
            dep.launcher.broadcast({"cmd": "exit"})
            dep.launcher.collect(dep.plan.hosts, timeout=1.0)
        except (AgentFailure, OSError):
            pass
        dep.launcher.kill()
    if dep.gateway is not None:
        try:
            dep.gateway.stop()
        except Exception:  # noqa: BLE001
            pass
    try:
        dep.server.stop()
    except Exception:  # noqa: BLE001
        pass
    try:
        _cleanup_shared(Path(dep.plan.shared_dir), dep.plan.cluster_id)
    except OSError:
        pass
    with _REGISTRY_LOCK:
        _DEPLOYMENTS.pop(dep.plan.cluster_id, None)
