"""Chunked object client: put / get / delete / list over the OSD fleet.

Placement is computed locally from the cluster map. A put writes data
chunks first and the manifest last, so the manifest acts as the commit
record. Fresh puts roll back by deleting what they wrote; overwrites
stage every new chunk first and only then commit, so the previous
version survives a mid-flight failure untouched. Readers verify the
whole-payload checksum and retry briefly when a concurrent overwrite is
caught mid-commit.
"""

from __future__ import annotations

import time

from ..control_plane import ClusterMap, MonitorClient
from ..errors import (
    ChecksumMismatch,
    NoSuchObject,
    OsdUnavailable,
    ProtocolError,
    StoreError,
)
from . import osd as osd_rpc
from .manifest import (
    ObjectManifest,
    checksum32,
    manifest_key,
    split_lengths,
    validate_object_name,
)
from .placement import place

GET_ATTEMPTS = 10
GET_RETRY_DELAY = 0.02


class StoreClient:
    def __init__(self, monitor: MonitorClient, secret: str, timeout: float = 30.0):
        self._monitor = monitor
        self._secret = secret
        self._timeout = timeout

    # -- plumbing

    def _map(self) -> ClusterMap:
        return self._monitor.get_map()

    def _osd_address(self, cmap: ClusterMap, osd_id: int) -> str:
        return cmap.osd(osd_id).address

    def _put_chunk(self, cmap, osd_id, pool, key, payload=b"", mode=osd_rpc.PUT_DIRECT):
        osd_rpc.put_chunk(
            self._osd_address(cmap, osd_id), self._secret, pool, key, payload,
            mode=mode, timeout=self._timeout,
        )

    def _fetch_manifest(self, cmap: ClusterMap, pool: str, name: str) -> ObjectManifest:
        key = manifest_key(name)
        last_error: StoreError = NoSuchObject(f"no object {pool}/{name}")
        for osd_id in place(cmap, pool, key):
            try:
                raw = osd_rpc.get_chunk(
                    self._osd_address(cmap, osd_id), self._secret, pool, key,
                    timeout=self._timeout,
                )
            except (NoSuchObject, OsdUnavailable) as exc:
                last_error = exc
                continue
            try:
                return ObjectManifest.from_bytes(raw)
            except ProtocolError as exc:
                raise ChecksumMismatch(f"manifest for {pool}/{name} is undecodable") from exc
        if isinstance(last_error, NoSuchObject):
            raise NoSuchObject(f"no object {pool}/{name}")
        raise last_error

    def _try_fetch_manifest(self, cmap, pool, name) -> ObjectManifest | None:
        try:
            return self._fetch_manifest(cmap, pool, name)
        except NoSuchObject:
            return None

    # -- operations

    def put_object(
        self,
        pool: str,
        name: str,
        data: bytes,
        user_metadata: dict[str, str] | None = None,
    ) -> ObjectManifest:
        validate_object_name(name)
        cmap = self._map()
        spec = cmap.pool(pool)
        previous = self._try_fetch_manifest(cmap, pool, name)
        manifest = ObjectManifest.build(
            pool, name, data, spec.chunk_size_bytes, user_metadata,
            generation=(previous.generation + 1 if previous else 1),
        )
        lengths = split_lengths(len(data), spec.chunk_size_bytes)
        view = memoryview(data)
        pieces = []  # (chunk_key, payload, [osd_id, ...] primary first)
        offset = 0
        for chunk, length in zip(manifest.chunk_names, lengths):
            pieces.append((chunk, view[offset:offset + length], place(cmap, pool, chunk)))
            offset += length
        pieces.append((manifest_key(name), manifest.to_bytes(), place(cmap, pool, manifest_key(name))))

        if previous is None:
            self._put_fresh(cmap, pool, pieces)
        else:
            self._put_overwrite(cmap, pool, pieces)
            self._drop_stale_chunks(cmap, pool, previous, manifest)
        return manifest

    def _put_fresh(self, cmap, pool, pieces) -> None:
        written: list[tuple[str, int]] = []
        try:
            for key, payload, targets in pieces:
                for osd_id in targets:  # primary first, replicas sequentially
                    self._put_chunk(cmap, osd_id, pool, key, payload)
                    written.append((key, osd_id))
        except StoreError:
            for key, osd_id in written:
                try:
                    osd_rpc.delete_chunk(
                        self._osd_address(cmap, osd_id), self._secret, pool, key,
                        timeout=self._timeout,
                    )
                except StoreError:
                    pass
            raise

    def _put_overwrite(self, cmap, pool, pieces) -> None:
        staged: list[tuple[str, int]] = []
        try:
            for key, payload, targets in pieces:
                for osd_id in targets:
                    self._put_chunk(cmap, osd_id, pool, key, payload, mode=osd_rpc.PUT_STAGE)
                    staged.append((key, osd_id))
        except StoreError:
            for key, osd_id in staged:
                try:
                    self._put_chunk(cmap, osd_id, pool, key, mode=osd_rpc.PUT_ABORT)
                except StoreError:
                    pass
            raise
        # Space is reserved everywhere; commits cannot run out of room.
        # The manifest is the last piece, so committing in order publishes
        # the new version only after every data chunk is in place.
        for key, osd_id in staged:
            self._put_chunk(cmap, osd_id, pool, key, mode=osd_rpc.PUT_COMMIT)

    def _drop_stale_chunks(self, cmap, pool, previous, current) -> None:
        stale = set(previous.chunk_names) - set(current.chunk_names)
        for chunk in sorted(stale):
            for osd_id in place(cmap, pool, chunk):
                try:
                    osd_rpc.delete_chunk(
                        self._osd_address(cmap, osd_id), self._secret, pool, chunk,
                        timeout=self._timeout,
                    )
                except StoreError:
                    pass

    def get_object(self, pool: str, name: str) -> tuple[bytes, dict[str, str]]:
        cmap = self._map()
        cmap.pool(pool)
        manifest = self._fetch_manifest(cmap, pool, name)
        failure = "checksum mismatch"
        for attempt in range(GET_ATTEMPTS):
            if attempt:
                time.sleep(GET_RETRY_DELAY)
                cmap = self._map()
                manifest = self._fetch_manifest(cmap, pool, name)
            data = self._assemble(cmap, pool, manifest)
            if data is None:
                failure = "chunk missing or unreachable"
                continue
            if len(data) == manifest.total_size_bytes and checksum32(data) == manifest.checksum:
                return data, dict(manifest.user_metadata)
            failure = "checksum mismatch"
        raise ChecksumMismatch(
            f"{pool}/{name}: {failure} after {GET_ATTEMPTS} attempts "
            f"(generation {manifest.generation})"
        )

    def _assemble(self, cmap, pool, manifest: ObjectManifest) -> bytes | None:
        parts = []
        for chunk in manifest.chunk_names:
            part = None
            for osd_id in place(cmap, pool, chunk):
                try:
                    part = osd_rpc.get_chunk(
                        self._osd_address(cmap, osd_id), self._secret, pool, chunk,
                        timeout=self._timeout,
                    )
                    break
                except (NoSuchObject, OsdUnavailable):
                    continue
            if part is None:
                return None
            parts.append(part)
        return b"".join(parts)

    def delete_object(self, pool: str, name: str) -> None:
        cmap = self._map()
        cmap.pool(pool)
        manifest = self._fetch_manifest(cmap, pool, name)  # NoSuchObject if absent
        # Manifest copies go first: once they are gone the object is gone,
        # and a crash mid-delete leaks chunks rather than corrupting reads.
        for key in [manifest_key(name), *manifest.chunk_names]:
            for osd_id in place(cmap, pool, key):
                try:
                    osd_rpc.delete_chunk(
                        self._osd_address(cmap, osd_id), self._secret, pool, key,
                        timeout=self._timeout,
                    )
                except NoSuchObject:
                    continue

    def list_objects(self, pool: str) -> list[tuple[str, int]]:
        cmap = self._map()
        cmap.pool(pool)
        newest: dict[str, ObjectManifest] = {}
        for info in cmap.up_osds():
            try:
                docs = osd_rpc.list_manifests(
                    info.address, self._secret, pool, timeout=self._timeout
                )
            except OsdUnavailable:
                continue
            for doc in docs:
                try:
                    m = ObjectManifest.from_doc(doc)
                except (ProtocolError, KeyError):
                    continue
                held = newest.get(m.name)
                if held is None or m.generation > held.generation:
                    newest[m.name] = m
        return [(name, newest[name].total_size_bytes) for name in sorted(newest)]

    def stat_object(self, pool: str, name: str) -> ObjectManifest:
        cmap = self._map()
        cmap.pool(pool)
        return self._fetch_manifest(cmap, pool, name)
