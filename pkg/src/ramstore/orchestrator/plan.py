"""Deployment plans and reports.

A plan is a single JSON-able document describing the whole transient
cluster: hosts, device geometry, replication, and the optional pool or
gateway to finish with. Reports carry ordered per-phase timings taken
from a monotonic clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..control_plane import DEFAULT_CHUNK_SIZE, PoolSpec
from ..errors import InvalidPlan
from ..util import parse_size

DEFAULT_PHASE_TIMEOUT = 30.0


@dataclass
class DeploymentPlan:
    cluster_id: str
    hosts: list[str]
    device_capacity_bytes: int
    shared_dir: Path
    osds_per_host: int = 1
    device_block_size_bytes: int = 4096
    replication_factor: int = 1
    pool: PoolSpec | None = None
    gateway: dict | None = None  # {"listen_address": "host:port"}
    phase_timeout_seconds: float = DEFAULT_PHASE_TIMEOUT

    def total_osds(self) -> int:
        return len(self.hosts) * self.osds_per_host

    def validate(self) -> "DeploymentPlan":
        if not self.cluster_id:
            raise InvalidPlan("cluster_id must be non-empty")
        if not self.hosts:
            raise InvalidPlan("plan needs at least one host")
        if len(set(self.hosts)) != len(self.hosts):
            raise InvalidPlan("host labels must be unique")
        if self.osds_per_host < 1:
            raise InvalidPlan(f"osds_per_host must be >= 1, got {self.osds_per_host}")
        if self.device_capacity_bytes <= 0 or self.device_block_size_bytes <= 0:
            raise InvalidPlan("device capacity and block size must be positive")
        if self.device_capacity_bytes % self.device_block_size_bytes:
            raise InvalidPlan("device capacity must be a whole number of blocks")
        if self.replication_factor < 1:
            raise InvalidPlan("replication_factor must be >= 1")
        if self.replication_factor > self.total_osds():
            raise InvalidPlan(
                f"replication {self.replication_factor} exceeds "
                f"{self.total_osds()} total OSDs"
            )
        if self.pool is not None and self.gateway is not None:
            raise InvalidPlan("request a pool or a gateway, not both")
        if self.gateway is not None and "listen_address" not in self.gateway:
            raise InvalidPlan("gateway request needs a listen_address")
        if self.phase_timeout_seconds <= 0:
            raise InvalidPlan("phase_timeout_seconds must be positive")
        return self

    def to_doc(self) -> dict:
        doc = {
            "cluster_id": self.cluster_id,
            "hosts": list(self.hosts),
            "osds_per_host": self.osds_per_host,
            "device_capacity_bytes": self.device_capacity_bytes,
            "device_block_size_bytes": self.device_block_size_bytes,
            "replication_factor": self.replication_factor,
            "pool": self.pool.to_doc() if self.pool else None,
            "gateway": dict(self.gateway) if self.gateway else None,
            "shared_dir": str(self.shared_dir),
            "phase_timeout_seconds": self.phase_timeout_seconds,
        }
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "DeploymentPlan":
        try:
            pool = None
            if doc.get("pool"):
                pool_doc = dict(doc["pool"])
                pool_doc.setdefault("replication_factor", doc.get("replication_factor", 1))
                pool_doc.setdefault("chunk_size_bytes", DEFAULT_CHUNK_SIZE)
                pool = PoolSpec.from_doc(pool_doc)
            capacity = doc["device_capacity_bytes"]
            if isinstance(capacity, str):
                capacity = parse_size(capacity)
            plan = cls(
                cluster_id=doc["cluster_id"],
                hosts=list(doc["hosts"]),
                osds_per_host=int(doc.get("osds_per_host", 1)),
                device_capacity_bytes=int(capacity),
                device_block_size_bytes=int(doc.get("device_block_size_bytes", 4096)),
                replication_factor=int(doc.get("replication_factor", 1)),
                pool=pool,
                gateway=doc.get("gateway") or None,
                shared_dir=Path(doc["shared_dir"]),
                phase_timeout_seconds=float(
                    doc.get("phase_timeout_seconds", DEFAULT_PHASE_TIMEOUT)
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPlan(f"undecodable plan: {exc}") from exc
        return plan.validate()


@dataclass
class DeploymentReport:
    cluster_id: str
    action: str  # "deploy" or "remove"
    phases: list[tuple[str, float]] = field(default_factory=list)
    per_host: dict[str, str] = field(default_factory=dict)
    total_seconds: float = 0.0

    def phase_seconds(self, name: str) -> float:
        for phase, seconds in self.phases:
            if phase == name:
                return seconds
        raise KeyError(name)

    def to_doc(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "action": self.action,
            "phases": [{"phase": p, "seconds": s} for p, s in self.phases],
            "per_host": dict(self.per_host),
            "total_seconds": self.total_seconds,
        }

    def render(self) -> str:
        lines = [f"{self.action} {self.cluster_id}: {self.total_seconds:.3f} s total"]
        for phase, seconds in self.phases:
            lines.append(f"  {phase:<20} {seconds * 1000:8.1f} ms")
        for host in sorted(self.per_host):
            lines.append(f"  host {host:<15} {self.per_host[host]}")
        return "\n".join(lines)
