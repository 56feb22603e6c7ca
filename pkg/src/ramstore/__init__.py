"""Transient RAM-backed object store.

A self-contained, desk-scale distributed object store: RAM-backed block
devices, a single-monitor control plane, rendezvous-hashed chunk placement,
a parallel cluster orchestrator, an S3-subset HTTP gateway, a multi-stage
pipeline harness with byte-exact I/O accounting, and a throughput sweep
tool. Everything runs on one machine; "hosts" are separate local processes.
"""

__version__ = "0.1.0"
