"""Exception hierarchy shared by every subsystem.

Errors cross process boundaries by name: a daemon serializes the class
name plus message, the client looks the name up in ``WIRE_REGISTRY`` and
re-raises the same type.
"""

from __future__ import annotations


class StoreError(Exception):
    """Base class for all operational errors."""

    def to_wire(self) -> tuple[str, str]:
        return type(self).__name__, str(self)


# --- ram backend ---

class InvalidGeometry(StoreError):
    pass


class QuotaExceeded(StoreError):
    pass


class NoSpace(StoreError):
    pass


class DeviceDestroyed(StoreError):
    pass


class OutOfRange(StoreError):
    pass


class UnknownDevice(StoreError):
    pass


# --- control plane ---

class AddressInUse(StoreError):
    pass


class DuplicateCluster(StoreError):
    pass


class UnknownCluster(StoreError):
    pass


class AuthFailure(StoreError):
    pass


class DuplicateOsd(StoreError):
    pass


class UnknownOsd(StoreError):
    pass


class NotEnoughOsds(StoreError):
    pass


class DuplicatePool(StoreError):
    pass


class UnknownPool(StoreError):
    pass


class MonitorUnavailable(StoreError):
    pass


class OsdUnavailable(StoreError):
    pass


# --- data plane ---

class NoSuchObject(StoreError):
    pass


class ChecksumMismatch(StoreError):
    pass


# --- orchestrator ---

class InvalidPlan(StoreError):
    pass


class SharedDirUnwritable(StoreError):
    pass


class PhaseTimeout(StoreError):
    def __init__(self, phase: str, hosts: list[str] | None = None):
        self.phase = phase
        self.hosts = list(hosts or [])
        lagging = f" (lagging hosts: {', '.join(self.hosts)})" if self.hosts else ""
        super().__init__(f"phase {phase!r} timed out{lagging}")


class AgentFailure(StoreError):
    def __init__(self, host: str, reason: str):
        self.host = host
        self.reason = reason
        super().__init__(f"agent on host {host!r} failed: {reason}")


# --- pipeline ---

class EmptyPipeline(StoreError):
    pass


class SingleStage(StoreError):
    pass


class ZeroBaseline(StoreError):
    pass


class BackendUnavailable(StoreError):
    pass


# --- bench ---

class TooFewSamples(StoreError):
    pass


class MismatchedRows(StoreError):
    pass


# --- wire plumbing ---

class ProtocolError(StoreError):
    pass


WIRE_REGISTRY: dict[str, type[StoreError]] = {
    cls.__name__: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, StoreError)
}


def from_wire(name: str, message: str) -> StoreError:
    """Rebuild the error a remote daemon reported."""
    cls = WIRE_REGISTRY.get(name)
    if cls is None:
        return StoreError(f"{name}: {message}")
    if cls is PhaseTimeout or cls is AgentFailure:
        # structured ctors; fall back to the rendered message
        err = StoreError.__new__(cls)
        Exception.__init__(err, message)
        return err
    return cls(message)
