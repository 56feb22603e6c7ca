"""Data plane: chunk placement, manifests, OSD daemons, and the object client."""

from .client import StoreClient
from .manifest import ObjectManifest, chunk_name, manifest_key
from .osd import OsdDaemon, OsdServer
from .placement import fnv1a_64, place, placement_score

__all__ = [
    "StoreClient",
    "ObjectManifest",
    "chunk_name",
    "manifest_key",
    "OsdDaemon",
    "OsdServer",
    "fnv1a_64",
    "place",
    "placement_score",
]
