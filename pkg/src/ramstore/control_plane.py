"""Single-monitor control plane: cluster map, keys, pools, metrics.

One monitor per cluster is the whole story — there is no quorum, no
election, and no settling delay anywhere in the bootstrap path. The
monitor keeps the authoritative epoch-versioned map in memory only and
serializes every mutation; it persists nothing.
"""

from __future__ import annotations

import copy
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .errors import (
    AuthFailure,
    DuplicateCluster,
    DuplicateOsd,
    DuplicatePool,
    NotEnoughOsds,
    UnknownCluster,
    UnknownOsd,
    UnknownPool,
)
from .util import new_secret

ROLES = ("monitor", "manager", "osd", "client", "gateway")

OSD_UP = "up"
OSD_DOWN = "down"

DEFAULT_CHUNK_SIZE = 4 * 1024 * 1024
DEFAULT_LIVENESS_WINDOW = 5.0


# ---------------------------------------------------------------- map types


@dataclass
class OsdInfo:
    osd_id: int
    host: str
    address: str
    capacity_bytes: int
    state: str = OSD_UP
    last_heartbeat: float = 0.0

    def to_doc(self) -> dict:
        return {
            "osd_id": self.osd_id,
            "host": self.host,
            "address": self.address,
            "capacity_bytes": self.capacity_bytes,
            "state": self.state,
            "last_heartbeat": self.last_heartbeat,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "OsdInfo":
        return cls(
            osd_id=int(doc["osd_id"]),
            host=doc["host"],
            address=doc["address"],
            capacity_bytes=int(doc["capacity_bytes"]),
            state=doc["state"],
            last_heartbeat=float(doc["last_heartbeat"]),
        )


@dataclass
class PoolSpec:
    name: str
    replication_factor: int = 1
    chunk_size_bytes: int = DEFAULT_CHUNK_SIZE

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "replication_factor": self.replication_factor,
            "chunk_size_bytes": self.chunk_size_bytes,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PoolSpec":
        return cls(
            name=doc["name"],
            replication_factor=int(doc["replication_factor"]),
            chunk_size_bytes=int(doc["chunk_size_bytes"]),
        )


@dataclass
class ClusterMap:
    cluster_id: str
    epoch: int
    monitor_address: str
    osds: list[OsdInfo] = field(default_factory=list)
    pools: list[PoolSpec] = field(default_factory=list)

    def osd(self, osd_id: int) -> OsdInfo:
        for info in self.osds:
            if info.osd_id == osd_id:
                return info
        raise UnknownOsd(f"no osd {osd_id} in map epoch {self.epoch}")

    def pool(self, name: str) -> PoolSpec:
        for spec in self.pools:
            if spec.name == name:
                return spec
        raise UnknownPool(f"no pool {name!r} in map epoch {self.epoch}")

    def up_osds(self) -> list[OsdInfo]:
        return [o for o in self.osds if o.state == OSD_UP]

    def to_doc(self) -> dict:
        return {
            "v": 1,
            "cluster_id": self.cluster_id,
            "epoch": self.epoch,
            "monitor_address": self.monitor_address,
            "osds": [o.to_doc() for o in self.osds],
            "pools": [p.to_doc() for p in self.pools],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ClusterMap":
        return cls(
            cluster_id=doc["cluster_id"],
            epoch=int(doc["epoch"]),
            monitor_address=doc["monitor_address"],
            osds=[OsdInfo.from_doc(d) for d in doc["osds"]],
            pools=[PoolSpec.from_doc(d) for d in doc["pools"]],
        )


class Keyring:
    """One random secret per role, exchanged as owner-only key files."""

    def __init__(self, secrets_by_role: dict[str, str]):
        missing = [r for r in ROLES if not secrets_by_role.get(r)]
        if missing:
            raise AuthFailure(f"keyring missing roles: {missing}")
        self._secrets = dict(secrets_by_role)

    @classmethod
    def issue(cls) -> "Keyring":
        return cls({role: new_secret() for role in ROLES})

    def secret(self, role: str) -> str:
        try:
            return self._secrets[role]
        except KeyError:
            raise AuthFailure(f"no such role {role!r}") from None

    def all_secrets(self) -> set[str]:
        return set(self._secrets.values())

    def to_doc(self) -> dict:
        return dict(self._secrets)

    @classmethod
    def from_doc(cls, doc: dict) -> "Keyring":
        return cls(doc)

    def write_dir(self, shared_dir: Path, cluster_id: str) -> list[Path]:
        """Write one ``<cluster_id>.<role>.key`` file per role, mode 0600."""
        written = []
        for role in ROLES:
            path = Path(shared_dir) / f"{cluster_id}.{role}.key"
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
            with os.fdopen(fd, "w") as fh:
                fh.write(self._secrets[role] + "\n")
            written.append(path)
        return written

    @classmethod
    def read_dir(cls, shared_dir: Path, cluster_id: str) -> "Keyring":
        secrets_by_role = {}
        for role in ROLES:
            path = Path(shared_dir) / f"{cluster_id}.{role}.key"
            try:
                secrets_by_role[role] = path.read_text().strip()
            except FileNotFoundError:
                raise AuthFailure(f"missing key file {path}") from None
        return cls(secrets_by_role)


def read_role_key(shared_dir: Path, cluster_id: str, role: str) -> str:
    path = Path(shared_dir) / f"{cluster_id}.{role}.key"
    try:
        return path.read_text().strip()
    except FileNotFoundError:
        raise AuthFailure(f"missing key file {path}") from None


# ---------------------------------------------------------------- monitor


class Monitor:
    """In-process cluster authority. All mutations bump the map epoch."""

    def __init__(
        self,
        cluster_id: str,
        monitor_address: str = "",
        liveness_window_seconds: float = DEFAULT_LIVENESS_WINDOW,
    ):
        self.cluster_id = cluster_id
        self.liveness_window_seconds = liveness_window_seconds
        self._lock = threading.Lock()
        self._map = ClusterMap(cluster_id, epoch=1, monitor_address=monitor_address)
        self._keyring: Keyring | None = None
        self._usage: dict[int, dict] = {}  # osd_id -> {"used_bytes", "manifest_counts"}

    # -- reads

    def get_map(self) -> ClusterMap:
        with self._lock:
            return copy.deepcopy(self._map)

    @property
    def keyring(self) -> Keyring | None:
        return self._keyring

    # -- key issuance

    def issue_keyring(self) -> Keyring:
        ring = Keyring.issue()
        with self._lock:
            self._keyring = ring
        return ring

    # -- mutations

    def set_monitor_address(self, address: str) -> None:
        with self._lock:
            self._map.monitor_address = address

    def register_osd(self, info: OsdInfo) -> ClusterMap:
        with self._lock:
            if any(o.osd_id == info.osd_id for o in self._map.osds):
                raise DuplicateOsd(f"osd {info.osd_id} already registered")
            entry = copy.deepcopy(info)
            entry.state = OSD_UP
            entry.last_heartbeat = time.monotonic()
            self._map.osds.append(entry)
            self._map.osds.sort(key=lambda o: o.osd_id)
            self._map.epoch += 1
            self._usage[info.osd_id] = {"used_bytes": 0, "manifest_counts": {}}
            return copy.deepcopy(self._map)

    def unregister_osd(self, osd_id: int) -> ClusterMap:
        with self._lock:
            keep = [o for o in self._map.osds if o.osd_id != osd_id]
            if len(keep) == len(self._map.osds):
                raise UnknownOsd(f"no osd {osd_id} to unregister")
            self._map.osds = keep
            self._map.epoch += 1
            self._usage.pop(osd_id, None)
            return copy.deepcopy(self._map)

    def create_pool(self, spec: PoolSpec) -> ClusterMap:
        with self._lock:
            if any(p.name == spec.name for p in self._map.pools):
                raise DuplicatePool(f"pool {spec.name!r} already exists")
            up = [o for o in self._map.osds if o.state == OSD_UP]
            if spec.replication_factor > len(up):
                raise NotEnoughOsds(
                    f"pool {spec.name!r} wants replication "
                    f"{spec.replication_factor} but only {len(up)} OSDs are up"
                )
            self._map.pools.append(copy.deepcopy(spec))
            self._map.epoch += 1
            return copy.deepcopy(self._map)

    def heartbeat(
        self,
        osd_id: int,
        used_bytes: int = 0,
        manifest_counts: dict[str, int] | None = None,
    ) -> None:
        with self._lock:
            info = next((o for o in self._map.osds if o.osd_id == osd_id), None)
            if info is None:
                raise UnknownOsd(f"heartbeat from unknown osd {osd_id}")
            info.last_heartbeat = time.monotonic()
            if info.state != OSD_UP:
                info.state = OSD_UP
                self._map.epoch += 1
            self._usage[osd_id] = {
                "used_bytes": int(used_bytes),
                "manifest_counts": dict(manifest_counts or {}),
            }

    def liveness_sweep(self, now: float | None = None) -> ClusterMap:
        """Mark OSDs down once their heartbeat ages past the window."""
        now = time.monotonic() if now is None else now
        with self._lock:
            for info in self._map.osds:
                if info.state == OSD_UP and now - info.last_heartbeat > self.liveness_window_seconds:
                    info.state = OSD_DOWN
                    self._map.epoch += 1
            return copy.deepcopy(self._map)

    # -- manager surface

    def metrics(self) -> dict:
        with self._lock:
            osds = [
                {
                    "osd_id": o.osd_id,
                    "host": o.host,
                    "state": o.state,
                    "capacity_bytes": o.capacity_bytes,
                    "used_bytes": self._usage.get(o.osd_id, {}).get("used_bytes", 0),
                }
                for o in self._map.osds
            ]
            pools = {}
            for spec in self._map.pools:
                copies = sum(
                    u.get("manifest_counts", {}).get(spec.name, 0)
                    for u in self._usage.values()
                )
                pools[spec.name] = copies // spec.replication_factor
            return {"epoch": self._map.epoch, "osds": osds, "pools": pools}


# ------------------------------------------------------- wire server/client

# Which roles may call which monitor op. "*" admits every role's secret;
# pool creation is a client action, registration and heartbeats are OSD
# actions, and only the monitor's own key may order a shutdown.
_OP_ROLES = {
    "get_map": "*",
    "register_osd": ("osd",),
    "unregister_osd": ("osd",),
    "create_pool": ("client",),
    "heartbeat": ("osd",),
    "metrics": "*",
    "shutdown": ("monitor",),
}


class MonitorServer:
    """Socket front end for one Monitor; one request per connection."""

    def __init__(
        self,
        monitor: Monitor,
        listen_address: str = "127.0.0.1:0",
        sweep: bool = True,
    ):
        self.monitor = monitor
        host, port = wire.parse_address(listen_address)
        self._server = wire.MessageServer(
            self._handle,
            host=host,
            port=port,
            max_workers=8,
            allowed_secrets=self._allowed,
            name=f"mon-{monitor.cluster_id}",
        )
        monitor.set_monitor_address(self._server.address)
        self._sweeper: threading.Thread | None = None
        self._stop_sweep = threading.Event()
        if sweep:
            self._sweeper = threading.Thread(
                target=self._sweep_loop, name=f"mon-sweep-{monitor.cluster_id}", daemon=True
            )

    @property
    def address(self) -> str:
        return self._server.address

    def start(self) -> "MonitorServer":
        self._server.start()
        if self._sweeper is not None:
            self._sweeper.start()
        return self

    def stop(self) -> None:
        self._stop_sweep.set()
        self._server.stop()
        release_cluster(self.monitor.cluster_id, self)

    def _sweep_loop(self) -> None:
        interval = min(1.0, self.monitor.liveness_window_seconds / 5)
        while not self._stop_sweep.wait(interval):
            self.monitor.liveness_sweep()

    def _allowed(self, op: str) -> set[str] | None:
        roles = _OP_ROLES.get(op)
        if roles is None:
            return None
        ring = self.monitor.keyring
        if ring is None:
            return set()  # nothing authenticates before keys are issued
        if roles == "*":
            return ring.all_secrets()
        return {ring.secret(role) for role in roles}

    def _handle(self, op: str, header: dict, payload: bytes) -> dict:
        mon = self.monitor
        if op == "get_map":
            return {"map": mon.get_map().to_doc()}
        if op == "register_osd":
            return {"map": mon.register_osd(OsdInfo.from_doc(header["osd"])).to_doc()}
        if op == "unregister_osd":
            return {"map": mon.unregister_osd(int(header["osd_id"])).to_doc()}
        if op == "create_pool":
            return {"map": mon.create_pool(PoolSpec.from_doc(header["pool"])).to_doc()}
        if op == "heartbeat":
            mon.heartbeat(
                int(header["osd_id"]),
                used_bytes=int(header.get("used_bytes", 0)),
                manifest_counts=header.get("manifest_counts"),
            )
            return {}
        if op == "metrics":
            return {"metrics": mon.metrics()}
        if op == "shutdown":
            threading.Thread(target=self._deferred_stop, daemon=True).start()
            return {"stopping": True}
        raise AuthFailure(f"unroutable op {op!r}")  # _allowed() should have caught it

    def _deferred_stop(self) -> None:
        time.sleep(0.05)  # let the response frame flush first
        self.stop()


class MonitorClient:
    """Typed client for the monitor wire protocol."""

    def __init__(self, address: str, secret: str, timeout: float = 10.0):
        self.address = address
        self._secret = secret
        self._timeout = timeout

    def _call(self, op: str, fields: dict | None = None) -> dict:
        resp, _ = wire.request(
            self.address, op, fields, auth=self._secret, timeout=self._timeout
        )
        return resp

    def get_map(self) -> ClusterMap:
        return ClusterMap.from_doc(self._call("get_map")["map"])

    def register_osd(self, info: OsdInfo) -> ClusterMap:
        return ClusterMap.from_doc(self._call("register_osd", {"osd": info.to_doc()})["map"])

    def unregister_osd(self, osd_id: int) -> ClusterMap:
        return ClusterMap.from_doc(self._call("unregister_osd", {"osd_id": osd_id})["map"])

    def create_pool(self, spec: PoolSpec) -> ClusterMap:
        return ClusterMap.from_doc(self._call("create_pool", {"pool": spec.to_doc()})["map"])

    def heartbeat(
        self, osd_id: int, used_bytes: int = 0, manifest_counts: dict[str, int] | None = None
    ) -> None:
        self._call(
            "heartbeat",
            {
                "osd_id": osd_id,
                "used_bytes": used_bytes,
                "manifest_counts": manifest_counts or {},
            },
        )

    def metrics(self) -> dict:
        return self._call("metrics")["metrics"]

    def shutdown(self) -> None:
        self._call("shutdown")


# ------------------------------------------------------- cluster registry

# One monitor per cluster_id per process; a second bootstrap of a live id
# must fail loudly instead of silently forking the map.
_CLUSTERS: dict[str, MonitorServer] = {}
_CLUSTERS_LOCK = threading.Lock()


def bootstrap_monitor(
    cluster_id: str,
    listen_address: str = "127.0.0.1:0",
    liveness_window_seconds: float = DEFAULT_LIVENESS_WINDOW,
) -> MonitorServer:
    """Create, register, and start the single monitor for a cluster.

    The map starts at epoch 1 with no OSDs and no pools, and the server
    is accepting requests on return — there is no settling or agreement
    phase because a lone monitor has nobody to agree with.
    """
    with _CLUSTERS_LOCK:
        if cluster_id in _CLUSTERS:
            raise DuplicateCluster(f"cluster {cluster_id!r} already has a monitor")
        monitor = Monitor(cluster_id, liveness_window_seconds=liveness_window_seconds)
        server = MonitorServer(monitor, listen_address)
        _CLUSTERS[cluster_id] = server
    return server.start()


def issue_keyring(cluster_id: str) -> Keyring:
    with _CLUSTERS_LOCK:
        server = _CLUSTERS.get(cluster_id)
    if server is None:
        raise UnknownCluster(f"no monitor for cluster {cluster_id!r}")
    return server.monitor.issue_keyring()


def release_cluster(cluster_id: str, server: MonitorServer | None = None) -> None:
    """Drop the registry entry (after shutdown) so the id can be reused."""
    with _CLUSTERS_LOCK:
        current = _CLUSTERS.get(cluster_id)
        if current is not None and (server is None or current is server):
            del _CLUSTERS[cluster_id]
