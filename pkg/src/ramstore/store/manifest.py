"""Object manifests: the metadata part of every stored object.

A manifest records the explicit ordered chunk list, total size, the
CRC-32 of the full payload, and user metadata, serialized as a
versioned JSON document. The manifest is itself stored as a chunk named
``<object>.manifest`` and is always written last, which makes it the
commit point of a put.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

from ..errors import ProtocolError

MANIFEST_SUFFIX = ".manifest"


def checksum32(data: bytes) -> int:
    """CRC-32 (reflected 0xEDB88320 polynomial) of the full payload."""
    return zlib.crc32(data) & 0xFFFFFFFF


def chunk_name(object_name: str, index: int) -> str:
    return f"{object_name}.{index:06d}"


def manifest_key(object_name: str) -> str:
    return object_name + MANIFEST_SUFFIX


def split_lengths(total_size: int, chunk_size: int) -> list[int]:
    """Chunk lengths for a payload: full chunks then the remainder, [] for empty."""
    if total_size == 0:
        return []
    full, rest = divmod(total_size, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def validate_object_name(name: str) -> str:
    if not name or "/" in name:
        raise ProtocolError(f"invalid object name {name!r}")
    if name.endswith(MANIFEST_SUFFIX):
        raise ProtocolError(f"object name may not end with {MANIFEST_SUFFIX!r}")
    return name


@dataclass
class ObjectManifest:
    pool: str
    name: str
    total_size_bytes: int
    chunk_size_bytes: int
    chunk_names: list[str]
    checksum: int
    user_metadata: dict[str, str] = field(default_factory=dict)
    generation: int = 1  # bumped on every overwrite; lets readers spot races

    @classmethod
    def build(
        cls,
        pool: str,
        name: str,
        data: bytes,
        chunk_size_bytes: int,
        user_metadata: dict[str, str] | None = None,
        generation: int = 1,
    ) -> "ObjectManifest":
        validate_object_name(name)
        count = len(split_lengths(len(data), chunk_size_bytes))
        return cls(
            pool=pool,
            name=name,
            total_size_bytes=len(data),
            chunk_size_bytes=chunk_size_bytes,
            chunk_names=[chunk_name(name, i) for i in range(count)],
            checksum=checksum32(data),
            user_metadata=dict(user_metadata or {}),
            generation=generation,
        )

    def to_doc(self) -> dict:
        return {
            "v": 1,
            "pool": self.pool,
            "name": self.name,
            "total_size_bytes": self.total_size_bytes,
            "chunk_size_bytes": self.chunk_size_bytes,
            "chunk_names": list(self.chunk_names),
            "checksum": self.checksum,
            "user_metadata": dict(self.user_metadata),
            "generation": self.generation,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_doc(cls, doc: dict) -> "ObjectManifest":
        return cls(
            pool=doc["pool"],
            name=doc["name"],
            total_size_bytes=int(doc["total_size_bytes"]),
            chunk_size_bytes=int(doc["chunk_size_bytes"]),
            chunk_names=list(doc["chunk_names"]),
            checksum=int(doc["checksum"]),
            user_metadata=dict(doc.get("user_metadata", {})),
            generation=int(doc.get("generation", 1)),
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ObjectManifest":
        try:
            return cls.from_doc(json.loads(raw))
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"undecodable manifest: {exc}") from exc
