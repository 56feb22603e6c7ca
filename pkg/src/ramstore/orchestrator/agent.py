"""Host agent: the per-host process body for a deployed cluster.

The agent never receives secrets from its parent — it reads the key
files and the cluster descriptor from the shared directory, exactly the
way a real host would pick them up from NFS. It then creates its RAM
devices and OSD daemons, registers them, reports ready on its result
pipe, and serves until the orchestrator walks it through the removal
phases over the command pipe.
"""

from __future__ import annotations

import os
import shutil
import time
import traceback
from pathlib import Path

from ..control_plane import Keyring, MonitorClient, OsdInfo
from ..errors import StoreError, UnknownOsd
from ..ram_backend import DeviceRegistry
from ..store import OsdDaemon, OsdServer
from ..util import read_json
from .launch import pipe_send, read_command
from .plan import DeploymentPlan

HEARTBEAT_INTERVAL = 1.0
COMMAND_POLL = 0.2


def descriptor_path(shared_dir: Path, cluster_id: str) -> Path:
    return Path(shared_dir) / f"{cluster_id}.cluster.json"


def runtime_root(shared_dir: Path, cluster_id: str) -> Path:
    return Path(shared_dir) / f"{cluster_id}.runtime"


def agent_body(plan: DeploymentPlan, host: str, host_index: int,
               cmd_r: int, res_w: int) -> None:
    """Child-process entry point; exits via os._exit."""
    try:
        _serve(plan, host, host_index, cmd_r, res_w)
    except BaseException:  # noqa: BLE001 - attribute, then die
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


def _serve(plan: DeploymentPlan, host: str, host_index: int,
           cmd_r: int, res_w: int) -> None:
    shared = Path(plan.shared_dir)
    ring = Keyring.read_dir(shared, plan.cluster_id)
    descriptor = read_json(descriptor_path(shared, plan.cluster_id))
    monitor_address = descriptor["monitor_address"]

    runtime = runtime_root(shared, plan.cluster_id) / host
    runtime.mkdir(parents=True, exist_ok=True)

    # the agent may reserve only its own slice of RAM
    registry = DeviceRegistry(
        max_total_bytes=plan.osds_per_host * plan.device_capacity_bytes
    )
    monitor = MonitorClient(monitor_address, ring.secret("osd"), timeout=10)
    osd_secrets = {ring.secret("osd"), ring.secret("client"), ring.secret("gateway")}

    units: list[tuple[OsdDaemon, OsdServer]] = []
    for slot in range(plan.osds_per_host):
        osd_id = host_index * plan.osds_per_host + slot
        device = registry.create_device(
            plan.device_capacity_bytes, plan.device_block_size_bytes,
            device_id=f"{host}-ram{slot}",
        )
        daemon = OsdDaemon(osd_id, device)
        server = OsdServer(daemon, osd_secrets, max_workers=4).start()
        monitor.register_osd(
            OsdInfo(osd_id, host=host, address=server.address,
                    capacity_bytes=plan.device_capacity_bytes)
        )
        units.append((daemon, server))

    addresses = {str(d.osd_id): s.address for d, s in units}
    (runtime / "agent.json").write_text(
        '{"pid": %d, "osds": %s}\n' % (os.getpid(), sorted(int(k) for k in addresses))
    )
    pipe_send(res_w, {"event": "ready", "host": host, "pid": os.getpid(),
                      "osds": sorted(int(k) for k in addresses),
                      "addresses": addresses})

    serving = True
    last_beat = 0.0
    while True:
        now = time.monotonic()
        if serving and now - last_beat >= HEARTBEAT_INTERVAL:
            for daemon, _ in units:
                try:
                    monitor.heartbeat(daemon.osd_id, daemon.used_bytes,
                                      daemon.manifest_counts())
                except StoreError:
                    pass
            last_beat = now
        try:
            command = read_command(cmd_r, timeout=COMMAND_POLL)
        except EOFError:
            # orchestrator died; tear down rather than linger
            for _, server in units:
                server.stop()
            registry.destroy_all()
            os._exit(1)
        if command is None:
            continue
        _handle(command["cmd"], plan, host, units, registry, monitor, runtime, res_w)
        serving = serving and command["cmd"] not in ("stop_osds",)


def _handle(cmd: str, plan, host, units, registry, monitor, runtime: Path,
            res_w: int) -> None:
    if cmd == "stop_osds":
        for _, server in units:
            server.stop()
        shutil.rmtree(runtime, ignore_errors=True)
        pipe_send(res_w, {"event": "done", "cmd": cmd, "host": host})
    elif cmd == "unregister_osds":
        for daemon, _ in units:
            try:
                monitor.unregister_osd(daemon.osd_id)
            except UnknownOsd:
                pass
        pipe_send(res_w, {"event": "done", "cmd": cmd, "host": host})
    elif cmd == "destroy_devices":
        registry.destroy_all()
        pipe_send(res_w, {"event": "done", "cmd": cmd, "host": host,
                          "reserved_bytes": registry.total_reserved_bytes})
        os._exit(0)
    elif cmd == "exit":
        pipe_send(res_w, {"event": "done", "cmd": cmd, "host": host})
        os._exit(0)
    else:
        pipe_send(res_w, {"event": "error", "host": host,
                          "error": f"unknown command {cmd!r}"})
