"""Shared test harness: an in-process cluster (monitor + OSD daemons).

Each OSD gets its own device, socket server, and heartbeat thread, so
integration tests exercise the real wire paths without forking anything.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import pytest

from ramstore import control_plane as cp
from ramstore.errors import StoreError
from ramstore.ram_backend import DeviceRegistry
from ramstore.store import OsdDaemon, OsdServer, StoreClient

KIB = 1024
MIB = 1024 * 1024

_cluster_seq = itertools.count()


@dataclass
class _OsdRuntime:
    daemon: OsdDaemon
    server: OsdServer
    thread: threading.Thread | None = None
    stop: threading.Event = None  # type: ignore[assignment]

    def kill(self) -> None:
        if self.stop is not None:
            self.stop.set()
        if self.thread is not None:
            self.thread.join(timeout=2)
        self.server.stop()


class LocalCluster:
    def __init__(self, server: cp.MonitorServer, keyring: cp.Keyring,
                 registry: DeviceRegistry, runtimes: list[_OsdRuntime]):
        self.server = server
        self.keyring = keyring
        self.registry = registry
        self.runtimes = runtimes
        self._stopped = False

    @property
    def monitor_address(self) -> str:
        return self.server.address

    @property
    def daemons(self) -> list[OsdDaemon]:
        return [r.daemon for r in self.runtimes]

    def monitor_client(self, role: str = "client") -> cp.MonitorClient:
        return cp.MonitorClient(self.server.address, self.keyring.secret(role))

    def store_client(self) -> StoreClient:
        return StoreClient(self.monitor_client("client"), self.keyring.secret("client"))

    def kill_osd(self, osd_id: int) -> None:
        """Simulate agent death: no more heartbeats, socket gone."""
        for rt in self.runtimes:
            if rt.daemon.osd_id == osd_id:
                rt.kill()
                return
        raise AssertionError(f"no runtime for osd {osd_id}")

    def total_used_bytes(self) -> int:
        return sum(r.daemon.used_bytes for r in self.runtimes)

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        for rt in self.runtimes:
            rt.kill()
        self.server.stop()
        self.registry.destroy_all()


def build_cluster(
    n_osds: int = 3,
    capacity_bytes: int = 64 * MIB,
    block_bytes: int = 4 * KIB,
    pools: tuple[cp.PoolSpec, ...] = (cp.PoolSpec("data", 1, 256 * KIB),),
    heartbeat_interval: float = 0.2,
    liveness_window: float = 300.0,
) -> LocalCluster:
    cid = f"testcluster-{next(_cluster_seq)}"
    server = cp.bootstrap_monitor(cid, liveness_window_seconds=liveness_window)
    ring = cp.issue_keyring(cid)
    registry = DeviceRegistry()
    osd_secrets = {ring.secret("osd"), ring.secret("client"), ring.secret("gateway")}
    register = cp.MonitorClient(server.address, ring.secret("osd"))

    runtimes: list[_OsdRuntime] = []
    for i in range(n_osds):
        device = registry.create_device(capacity_bytes, block_bytes, device_id=f"{cid}-ram{i}")
        daemon = OsdDaemon(i, device)
        osd_server = OsdServer(daemon, osd_secrets).start()
        register.register_osd(
            cp.OsdInfo(i, host=f"host{i}", address=osd_server.address,
                       capacity_bytes=capacity_bytes)
        )
        runtimes.append(_OsdRuntime(daemon, osd_server, stop=threading.Event()))

    def beat(rt: _OsdRuntime) -> None:
        client = cp.MonitorClient(server.address, ring.secret("osd"), timeout=5)
        while not rt.stop.wait(heartbeat_interval):
            try:
                client.heartbeat(rt.daemon.osd_id, rt.daemon.used_bytes,
                                 rt.daemon.manifest_counts())
            except StoreError:
                break

    for rt in runtimes:
        rt.thread = threading.Thread(target=beat, args=(rt,), daemon=True)
        rt.thread.start()

    pool_client = cp.MonitorClient(server.address, ring.secret("client"))
    for spec in pools:
        pool_client.create_pool(spec)
    return LocalCluster(server, ring, registry, runtimes)


@pytest.fixture
def make_cluster():
    built: list[LocalCluster] = []

    def _make(**kwargs) -> LocalCluster:
        cluster = build_cluster(**kwargs)
        built.append(cluster)
        return cluster

    yield _make
    for cluster in built:
        cluster.stop()


@pytest.fixture
def cluster(make_cluster) -> LocalCluster:
    return make_cluster()
