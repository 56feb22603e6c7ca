"""OSD daemon: a chunk key/value store on top of one RamDevice.

Extents are block-aligned and tracked in an in-memory index; reads and
index mutations are serialized so a reader never sees a torn chunk.
Writes support a two-phase mode (stage, then commit) so an overwrite can
reserve space for the new bytes while the old bytes stay intact — a
failed overwrite rolls back to exactly the previous contents.
"""

from __future__ import annotations

import json
import threading

from .. import wire
from ..errors import NoSpace, NoSuchObject, OsdUnavailable
from ..ram_backend import RamDevice
from .manifest import MANIFEST_SUFFIX

PUT_DIRECT = "direct"
PUT_STAGE = "stage"
PUT_COMMIT = "commit"
PUT_ABORT = "abort"

OSD_OPS = ("put_chunk", "get_chunk", "delete_chunk", "list_manifests")


class OsdDaemon:
    """Stores chunks for any pool on a single device."""

    def __init__(self, osd_id: int, device: RamDevice):
        self.osd_id = osd_id
        self.device = device
        self._lock = threading.RLock()
        self._index: dict[str, tuple[int, int]] = {}  # "pool/key" -> (offset, length)
        self._staged: dict[str, tuple[int, int]] = {}
        self._free: list[tuple[int, int]] = [(0, device.capacity_bytes)]

    # -- extent allocator (first fit, block aligned, coalescing free list)

    def _extent_size(self, length: int) -> int:
        block = self.device.block_size_bytes
        return ((length + block - 1) // block) * block

    def _alloc(self, length: int) -> int:
        want = self._extent_size(length)
        if want == 0:
            return 0
        for i, (off, size) in enumerate(self._free):
            if size >= want:
                if size == want:
                    del self._free[i]
                else:
                    self._free[i] = (off + want, size - want)
                return off
        raise NoSpace(f"osd {self.osd_id} cannot fit {length} bytes")

    def _release(self, offset: int, length: int) -> None:
        size = self._extent_size(length)
        if size == 0:
            return
        self.device.discard(offset, length)
        self._free.append((offset, size))
        self._free.sort()
        merged: list[tuple[int, int]] = []
        for off, sz in self._free:
            if merged and merged[-1][0] + merged[-1][1] == off:
                merged[-1] = (merged[-1][0], merged[-1][1] + sz)
            else:
                merged.append((off, sz))
        self._free = merged

    @property
    def free_bytes(self) -> int:
        with self._lock:
            return sum(size for _, size in self._free)

    @property
    def used_bytes(self) -> int:
        return self.device.used_bytes

    # -- chunk operations

    def put(self, pool: str, key: str, data: bytes, mode: str = PUT_DIRECT) -> None:
        full = f"{pool}/{key}"
        with self._lock:
            if mode == PUT_COMMIT:
                staged = self._staged.pop(full, None)
                if staged is None:
                    raise NoSuchObject(f"osd {self.osd_id}: nothing staged for {full}")
                old = self._index.pop(full, None)
                self._index[full] = staged
                if old is not None:
                    self._release(*old)
                return
            if mode == PUT_ABORT:
                staged = self._staged.pop(full, None)
                if staged is not None:
                    self._release(*staged)
                return
            offset = self._alloc(len(data))
            self.device.write_at(offset, data)
            table = self._staged if mode == PUT_STAGE else self._index
            old = table.pop(full, None)
            table[full] = (offset, len(data))
            if old is not None:
                self._release(*old)

    def get(self, pool: str, key: str) -> bytes:
        full = f"{pool}/{key}"
        with self._lock:
            extent = self._index.get(full)
            if extent is None:
                raise NoSuchObject(f"osd {self.osd_id}: no chunk {full}")
            return self.device.read_at(*extent)

    def delete(self, pool: str, key: str) -> None:
        full = f"{pool}/{key}"
        with self._lock:
            extent = self._index.pop(full, None)
            if extent is None:
                raise NoSuchObject(f"osd {self.osd_id}: no chunk {full}")
            self._release(*extent)

    def list_manifests(self, pool: str) -> list[dict]:
        prefix = pool + "/"
        with self._lock:
            keys = [
                k for k in self._index
                if k.startswith(prefix) and k.endswith(MANIFEST_SUFFIX)
            ]
            docs = []
            for k in sorted(keys):
                raw = self.device.read_at(*self._index[k])
                try:
                    docs.append(json.loads(raw))
                except ValueError:
                    continue  # undecodable manifests surface at get time instead
            return docs

    def manifest_counts(self) -> dict[str, int]:
        """Per-pool count of manifests held here; heartbeat payload."""
        with self._lock:
            counts: dict[str, int] = {}
            for k in self._index:
                if k.endswith(MANIFEST_SUFFIX):
                    pool = k.split("/", 1)[0]
                    counts[pool] = counts.get(pool, 0) + 1
            return counts

    def chunk_keys(self) -> list[str]:
        with self._lock:
            return sorted(self._index)


class OsdServer:
    """Socket front end for one OsdDaemon."""

    def __init__(
        self,
        daemon: OsdDaemon,
        secrets: set[str],
        listen_address: str = "127.0.0.1:0",
        max_workers: int = 8,
    ):
        self.daemon = daemon
        self._secrets = set(secrets)
        host, port = wire.parse_address(listen_address)
        self._server = wire.MessageServer(
            self._handle,
            host=host,
            port=port,
            max_workers=max_workers,
            allowed_secrets=lambda op: self._secrets if op in OSD_OPS else None,
            name=f"osd-{daemon.osd_id}",
        )

    @property
    def address(self) -> str:
        return self._server.address

    def start(self) -> "OsdServer":
        self._server.start()
        return self

    def stop(self) -> None:
        self._server.stop()

    def _handle(self, op: str, header: dict, payload: bytes):
        d = self.daemon
        if op == "put_chunk":
            d.put(header["pool"], header["key"], payload, header.get("mode", PUT_DIRECT))
            return {}
        if op == "get_chunk":
            return {}, d.get(header["pool"], header["key"])
        if op == "delete_chunk":
            d.delete(header["pool"], header["key"])
            return {}
        if op == "list_manifests":
            return {"manifests": d.list_manifests(header["pool"])}
        raise NoSuchObject(f"unroutable op {op!r}")


# -- wire client helpers (used by StoreClient and the host agents)


def put_chunk(address, secret, pool, key, payload=b"", mode=PUT_DIRECT, timeout=30.0):
    wire.request(
        address,
        "put_chunk",
        {"pool": pool, "key": key, "mode": mode},
        payload,
        auth=secret,
        timeout=timeout,
        unavailable=OsdUnavailable,
    )


def get_chunk(address, secret, pool, key, timeout=30.0) -> bytes:
    _, payload = wire.request(
        address,
        "get_chunk",
        {"pool": pool, "key": key},
        auth=secret,
        timeout=timeout,
        unavailable=OsdUnavailable,
    )
    return payload


def delete_chunk(address, secret, pool, key, timeout=30.0) -> None:
    wire.request(
        address,
        "delete_chunk",
        {"pool": pool, "key": key},
        auth=secret,
        timeout=timeout,
        unavailable=OsdUnavailable,
    )


def list_manifests(address, secret, pool, timeout=30.0) -> list[dict]:
    resp, _ = wire.request(
        address,
        "list_manifests",
        {"pool": pool},
        auth=secret,
        timeout=timeout,
        unavailable=OsdUnavailable,
    )
    return resp["manifests"]
