"""Deterministic chunk placement by highest-random-weight hashing.

Every client computes placements independently from the cluster map:
score each up OSD against the chunk's identity with a 64-bit FNV-1a
hash and take the top scorers. No placement state is stored anywhere,
so any process (or another language) can re-derive the same answer.
"""

from __future__ import annotations

from ..errors import NotEnoughOsds

FNV64_OFFSET_BASIS = 14695981039346656037
FNV64_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def placement_score(osd_id: int, pool: str, chunk: str) -> int:
    """Weight of one OSD for one chunk; fields are NUL-delimited."""
    return fnv1a_64(b"%d\x00%s\x00%s" % (osd_id, pool.encode(), chunk.encode()))


def rank_osds(osd_ids: list[int], pool: str, chunk: str) -> list[int]:
    """All candidates ordered best-first; ties go to the lower osd_id."""
    return sorted(osd_ids, key=lambda i: (-placement_score(i, pool, chunk), i))


def place(cluster_map, pool: str, chunk: str) -> list[int]:
    """Target OSD ids for a chunk, one per replica, best placement first.

    Deterministic for a fixed (set of up OSDs, pool, chunk) regardless of
    map epoch or OSD ordering. Raises UnknownPool / NotEnoughOsds.
    """
    spec = cluster_map.pool(pool)
    up_ids = [o.osd_id for o in cluster_map.up_osds()]
    if len(up_ids) < spec.replication_factor:
        raise NotEnoughOsds(
            f"pool {pool!r} needs {spec.replication_factor} up OSDs, have {len(up_ids)}"
        )
    return rank_osds(up_ids, pool, chunk)[: spec.replication_factor]
