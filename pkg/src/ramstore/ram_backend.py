"""RAM-backed block devices with hard quotas and exact byte accounting.

Devices are byte-addressed over a fixed capacity. Backing memory is
allocated lazily per touched block so large nominal capacities are cheap
to declare; unwritten regions read as zeros. There is no compression of
any kind: ``used_bytes`` counts exactly the distinct bytes ever written
(minus discards), independent of payload content.
"""

from __future__ import annotations

import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .errors import (
    DeviceDestroyed,
    InvalidGeometry,
    NoSpace,
    OutOfRange,
    QuotaExceeded,
    UnknownDevice,
)

ACTIVE = "active"
DESTROYED = "destroyed"


class _IntervalSet:
    """Disjoint sorted half-open byte intervals; tracks total coverage."""

    def __init__(self):
        self._starts: list[int] = []
        self._ends: list[int] = []
        self.total = 0

    def add(self, start: int, end: int) -> int:
        """Cover [start, end); returns the number of newly covered bytes."""
        if end <= start:
            return 0
        i = bisect_left(self._ends, start)
        j = bisect_right(self._starts, end)
        covered = 0
        for k in range(i, j):
            covered += max(0, min(end, self._ends[k]) - max(start, self._starts[k]))
        new_start, new_end = start, end
        if i < j:
            new_start = min(start, self._starts[i])
            new_end = max(end, self._ends[j - 1])
        self._starts[i:j] = [new_start]
        self._ends[i:j] = [new_end]
        added = (end - start) - covered
        self.total += added
        return added

    def remove(self, start: int, end: int) -> int:
        """Uncover [start, end); returns the number of bytes removed."""
        if end <= start:
            return 0
        i = bisect_right(self._ends, start)
        j = bisect_left(self._starts, end)
        if i >= j:
            return 0
        removed = 0
        keep_starts: list[int] = []
        keep_ends: list[int] = []
        for k in range(i, j):
            s, e = self._starts[k], self._ends[k]
            removed += min(end, e) - max(start, s)
            if s < start:
                keep_starts.append(s)
                keep_ends.append(start)
            if e > end:
                keep_starts.append(end)
                keep_ends.append(e)
        self._starts[i:j] = keep_starts
        self._ends[i:j] = keep_ends
        self.total -= removed
        return removed

    def overlaps(self, start: int, end: int) -> bool:
        i = bisect_right(self._ends, start)
        return i < len(self._starts) and self._starts[i] < end


@dataclass
class RamDevice:
    """One fixed-quota in-memory block device."""

    device_id: str
    capacity_bytes: int
    block_size_bytes: int
    state: str = ACTIVE
    _blocks: dict = field(default_factory=dict, repr=False)
    _touched: _IntervalSet = field(default_factory=_IntervalSet, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def used_bytes(self) -> int:
        return self._touched.total

    def _require_active(self) -> None:
        if self.state != ACTIVE:
            raise DeviceDestroyed(f"device {self.device_id} is destroyed")

    def write_at(self, offset_bytes: int, data: bytes) -> None:
        with self._lock:
            self._require_active()
            if offset_bytes < 0:
                raise OutOfRange(f"negative offset {offset_bytes}")
            end = offset_bytes + len(data)
            if end > self.capacity_bytes:
                raise NoSpace(
                    f"write [{offset_bytes}, {end}) exceeds capacity "
                    f"{self.capacity_bytes} on {self.device_id}"
                )
            if not data:
                return
            view = memoryview(data)
            bs = self.block_size_bytes
            pos = offset_bytes
            while pos < end:
                block_idx, block_off = divmod(pos, bs)
                n = min(bs - block_off, end - pos)
                block = self._blocks.get(block_idx)
                if block is None:
                    block = self._blocks[block_idx] = bytearray(bs)
                block[block_off:block_off + n] = view[pos - offset_bytes:pos - offset_bytes + n]
                pos += n
            self._touched.add(offset_bytes, end)

    def read_at(self, offset_bytes: int, length_bytes: int) -> bytes:
        with self._lock:
            self._require_active()
            if offset_bytes < 0 or length_bytes < 0:
                raise OutOfRange("negative offset or length")
            end = offset_bytes + length_bytes
            if end > self.capacity_bytes:
                raise OutOfRange(
                    f"read [{offset_bytes}, {end}) exceeds capacity {self.capacity_bytes}"
                )
            out = bytearray(length_bytes)
            bs = self.block_size_bytes
            pos = offset_bytes
            while pos < end:
                block_idx, block_off = divmod(pos, bs)
                n = min(bs - block_off, end - pos)
                block = self._blocks.get(block_idx)
                if block is not None:
                    out[pos - offset_bytes:pos - offset_bytes + n] = block[block_off:block_off + n]
                pos += n
            return bytes(out)

    def discard(self, offset_bytes: int, length_bytes: int) -> int:
        """Zero a range and release its accounting; returns bytes freed."""
        with self._lock:
            self._require_active()
            end = offset_bytes + length_bytes
            if offset_bytes < 0 or end > self.capacity_bytes:
                raise OutOfRange(f"discard [{offset_bytes}, {end}) out of range")
            freed = self._touched.remove(offset_bytes, end)
            bs = self.block_size_bytes
            pos = offset_bytes
            while pos < end:
                block_idx, block_off = divmod(pos, bs)
                n = min(bs - block_off, end - pos)
                block = self._blocks.get(block_idx)
                if block is not None:
                    block_start = block_idx * bs
                    if not self._touched.overlaps(block_start, block_start + bs):
                        del self._blocks[block_idx]
                    else:
                        block[block_off:block_off + n] = bytes(n)
                pos += n
            return freed

    def _destroy(self) -> None:
        with self._lock:
            self.state = DESTROYED
            self._blocks.clear()


class DeviceRegistry:
    """Process-wide device table with conservation accounting.

    ``total_reserved_bytes`` always equals the sum of active device
    capacities; an optional registry cap turns over-reservation into
    QuotaExceeded at create time.
    """

    def __init__(self, max_total_bytes: int | None = None):
        self.max_total_bytes = max_total_bytes
        self._devices: dict[str, RamDevice] = {}
        self._total = 0
        self._seq = 0
        self._lock = threading.Lock()

    @property
    def total_reserved_bytes(self) -> int:
        return self._total

    def create_device(
        self,
        capacity_bytes: int,
        block_size_bytes: int,
        device_id: str | None = None,
    ) -> RamDevice:
        if capacity_bytes <= 0 or block_size_bytes <= 0:
            raise InvalidGeometry(
                f"capacity and block size must be positive, got "
                f"({capacity_bytes}, {block_size_bytes})"
            )
        if capacity_bytes % block_size_bytes != 0:
            raise InvalidGeometry(
                f"capacity {capacity_bytes} is not a multiple of block size {block_size_bytes}"
            )
        with self._lock:
            if self.max_total_bytes is not None and self._total + capacity_bytes > self.max_total_bytes:
                raise QuotaExceeded(
                    f"registry cap {self.max_total_bytes} would be exceeded "
                    f"({self._total} reserved, {capacity_bytes} requested)"
                )
            if device_id is None:
                device_id = f"ram{self._seq}"
                self._seq += 1
            if device_id in self._devices:
                raise InvalidGeometry(f"device id {device_id!r} already exists")
            device = RamDevice(device_id, capacity_bytes, block_size_bytes)
            self._devices[device_id] = device
            self._total += capacity_bytes
            return device

    def get(self, device_id: str) -> RamDevice:
        with self._lock:
            device = self._devices.get(device_id)
        if device is None:
            raise UnknownDevice(f"no device {device_id!r}")
        return device

    def write_at(self, device_id: str, offset_bytes: int, data: bytes) -> None:
        self.get(device_id).write_at(offset_bytes, data)

    def read_at(self, device_id: str, offset_bytes: int, length_bytes: int) -> bytes:
        return self.get(device_id).read_at(offset_bytes, length_bytes)

    def discard(self, device_id: str, offset_bytes: int, length_bytes: int) -> int:
        return self.get(device_id).discard(offset_bytes, length_bytes)

    def destroy_device(self, device_id: str) -> None:
        """Destroy and release RAM; a destroyed id is unknown to destroy again."""
        with self._lock:
            device = self._devices.get(device_id)
            if device is None or device.state != ACTIVE:
                raise UnknownDevice(f"no active device {device_id!r}")
            device._destroy()
            self._total -= device.capacity_bytes

    def destroy_all(self) -> None:
        with self._lock:
            ids = [d.device_id for d in self._devices.values() if d.state == ACTIVE]
        for device_id in ids:
            try:
                self.destroy_device(device_id)
            except UnknownDevice:
                pass

    def active_devices(self) -> list[RamDevice]:
        with self._lock:
            return [d for d in self._devices.values() if d.state == ACTIVE]
