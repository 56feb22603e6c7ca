"""Concrete stage I/O targets: a throttleable directory and a cluster pool.

Both expose the same three calls (write/read/exists) so the runner treats
them interchangeably; only the ledger cares which kind moved the bytes.

The transient backend stripes large payloads across part-objects. Chunk
placement hashes whole names, so consecutive chunk indices of one object
gravitate together; separate part-objects re-roll that placement per
stripe, spreading a stage's output over the cluster instead of filling
one device. Parts are disjoint ranges of the payload, which is also what
lets a stage fan its I/O out over several workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..errors import BackendUnavailable, NoSuchObject, ProtocolError
from ..store import StoreClient
from ..util import TokenBucket
from .model import CENTRAL, TRANSIENT, BackendRef

STRIPE_GRANULE = 8 << 20  # payload bytes per part-object

_PART_META = "stripe-parts"
_BYTES_META = "stripe-bytes"


class CentralBackend:
    """Files in a directory, optionally rate-limited to mimic a busy share."""

    kind = CENTRAL

    def __init__(self, root: Path, throttle_bytes_per_second: float | None = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise BackendUnavailable(f"central directory {self.root} does not exist")
        self._bucket = (
            TokenBucket(throttle_bytes_per_second, burst_bytes=1 << 20)
            if throttle_bytes_per_second
            else None
        )

    def _path(self, name: str) -> Path:
        if "/" in name or name in ("", ".", ".."):
            raise BackendUnavailable(f"unusable object name {name!r}")
        return self.root / name

    def write(self, name: str, data: bytes) -> None:
        if self._bucket:
            self._bucket.acquire(len(data))
        self._path(name).write_bytes(data)

    def read(self, name: str) -> bytes:
        path = self._path(name)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise NoSuchObject(f"no file {name!r} under {self.root}") from None
        if self._bucket:
            self._bucket.acquire(len(data))
        return data

    def exists(self, name: str) -> bool:
        return self._path(name).exists()


class TransientBackend:
    """A pool in a deployed cluster, reached through the native client.

    Payloads over STRIPE_GRANULE are split into ``<name>.s<i>`` parts plus
    an empty head object under the plain name whose metadata lists the
    stripe layout; the head is written last, so a reader never sees a
    half-written stripe set.
    """

    kind = TRANSIENT

    def __init__(self, client: StoreClient, pool: str, workers: int = 1):
        self.client = client
        self.pool = pool
        self.workers = max(1, workers)

    @staticmethod
    def _part_name(name: str, index: int) -> str:
        return f"{name}.s{index:04d}"

    def _each(self, tasks):
        """Run the thunks, with a worker pool when configured for one."""
        if self.workers == 1 or len(tasks) <= 1:
            return [task() for task in tasks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return [f.result() for f in [pool.submit(t) for t in tasks]]

    def write(self, name: str, data: bytes) -> None:
        if len(data) <= STRIPE_GRANULE:
            self.client.put_object(self.pool, name, data)
            return
        view = memoryview(data)
        ranges = range(0, len(data), STRIPE_GRANULE)
        self._each([
            (lambda i=i, off=off: self.client.put_object(
                self.pool, self._part_name(name, i), bytes(view[off:off + STRIPE_GRANULE])
            ))
            for i, off in enumerate(ranges)
        ])
        self.client.put_object(
            self.pool, name, b"",
            user_metadata={_PART_META: str(len(ranges)), _BYTES_META: str(len(data))},
        )

    def read(self, name: str) -> bytes:
        head, meta = self.client.get_object(self.pool, name)
        if _PART_META not in meta:
            return head
        parts = int(meta[_PART_META])
        pieces = self._each([
            (lambda i=i: self.client.get_object(self.pool, self._part_name(name, i))[0])
            for i in range(parts)
        ])
        data = b"".join(pieces)
        if len(data) != int(meta[_BYTES_META]):
            raise ProtocolError(
                f"stripe set {name!r} reassembled to {len(data)} bytes, "
                f"expected {meta[_BYTES_META]}"
            )
        return data

    def exists(self, name: str) -> bool:
        try:
            self.client.stat_object(self.pool, name)
        except NoSuchObject:
            return False
        return True


def make_backend(ref: BackendRef, *, store_client: StoreClient | None = None, workers: int = 1):
    """Turn a BackendRef into a live backend, or fail with BackendUnavailable."""
    ref.validate()
    if ref.kind == CENTRAL:
        return CentralBackend(Path(ref.path or ""), ref.throttle_bytes_per_second)
    if store_client is None:
        raise BackendUnavailable(
            f"no cluster client available for transient pool {ref.pool!r}"
        )
    return TransientBackend(store_client, ref.pool or "", workers=workers)
