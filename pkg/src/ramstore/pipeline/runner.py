"""Executes pipeline specs stage by stage, accounting every byte moved.

Payloads are pseudorandom streams derived from the pipeline's seed, so two
runs of the same pipeline move byte-identical data. The runner checksums
everything it writes and verifies each stage reads exactly what its
predecessor wrote — a corrupted or crossed-up backend surfaces as
ChecksumMismatch, never as silently wrong ledger numbers.

``run_with_inline_cluster`` wraps a run with deploy/remove of a transient
cluster sized from the pipeline itself, timing both phases for the report.
"""

from __future__ import annotations

import math
import time
import zlib
from pathlib import Path

from ..control_plane import Keyring, MonitorClient, PoolSpec
from ..errors import ChecksumMismatch
from ..orchestrator import DeploymentPlan, deploy, remove, status
from ..store import StoreClient
from ..util import deterministic_bytes
from .backends import make_backend
from .model import (
    TRANSIENT,
    BackendRef,
    IoLedger,
    PipelineReport,
    PipelineSpec,
)

INPUT_OBJECT = "input"

# Inline-orchestration defaults: a small two-host cluster with enough RAM
# headroom over the pipeline's retained intermediates.
INLINE_HOSTS = ("node1", "node2")
INLINE_OSDS_PER_HOST = 2
INLINE_CHUNK_SIZE = 1 << 20
_BLOCK = 4096


def _backend_key(ref: BackendRef) -> str:
    if ref.kind == TRANSIENT:
        return f"transient:{ref.pool}"
    return f"central:{Path(ref.path or '').resolve()}"


def run_pipeline(spec: PipelineSpec, *, store_client: StoreClient | None = None) -> PipelineReport:
    """Run every stage in order and return the ledger plus wall timings."""
    spec.validate()
    backends: dict[BackendRef, object] = {}

    def backend_for(ref: BackendRef):
        if ref not in backends:
            backends[ref] = make_backend(
                ref, store_client=store_client, workers=spec.parallelism
            )
        return backends[ref]

    # Seed the initial input onto the central input backend. This models
    # the pre-existing dataset, so it happens before the clock and ledger.
    input_payload = deterministic_bytes(f"{spec.seed}:input", spec.input_bytes)
    backend_for(spec.input_backend).write(INPUT_OBJECT, input_payload)

    # (backend key, object name) -> (crc32, length) of everything written.
    written: dict[tuple[str, str], tuple[int, int]] = {
        (_backend_key(spec.input_backend), INPUT_OBJECT): (
            zlib.crc32(input_payload),
            len(input_payload),
        ),
    }
    del input_payload

    ledger = IoLedger()
    stage_seconds: list[tuple[str, float]] = []

    for k, stage in enumerate(spec.stages):
        started = time.monotonic()

        if stage.read_from is None:
            src_ref, src_name = spec.input_backend, INPUT_OBJECT
        else:
            src_ref, src_name = stage.read_from, f"{spec.stages[k - 1].name}.out"
        data = backend_for(src_ref).read(src_name)

        expect = written.get((_backend_key(src_ref), src_name))
        actual = (zlib.crc32(data), len(data))
        if expect is None or actual != expect:
            raise ChecksumMismatch(
                f"stage {stage.name!r} read {src_name!r} with checksum "
                f"{actual[0]:#010x}/{actual[1]}B, expected "
                f"{'nothing recorded' if expect is None else f'{expect[0]:#010x}/{expect[1]}B'}"
            )
        ledger.add(stage.name, src_ref.kind, bytes_read=len(data))
        if stage.read_from is None:
            ledger.initial_input_bytes += len(data)
        del data

        if stage.synthetic_compute_seconds:
            time.sleep(stage.synthetic_compute_seconds)

        output = deterministic_bytes(f"{spec.seed}:{k}:{stage.name}", stage.output_bytes)
        out_name = f"{stage.name}.out"
        backend_for(stage.write_to).write(out_name, output)
        written[(_backend_key(stage.write_to), out_name)] = (zlib.crc32(output), len(output))
        ledger.add(stage.name, stage.write_to.kind, bytes_written=len(output))
        del output

        stage_seconds.append((stage.name, time.monotonic() - started))

    return PipelineReport(
        ledger=ledger,
        stage_seconds=stage_seconds,
        total_seconds=sum(s for _, s in stage_seconds),
    )


def transient_pools(spec: PipelineSpec) -> list[str]:
    """Pool names the pipeline touches, in first-use order."""
    pools: list[str] = []
    for stage in spec.stages:
        for ref in (stage.read_from, stage.write_to):
            if ref is not None and ref.kind == TRANSIENT and ref.pool not in pools:
                pools.append(ref.pool or "")
    return pools


def inline_plan(
    spec: PipelineSpec,
    shared_dir: Path,
    cluster_id: str = "pipeline",
) -> DeploymentPlan:
    """Size a throwaway cluster from the pipeline's retained intermediates."""
    retained = sum(
        stage.output_bytes for stage in spec.stages if stage.write_to.kind == TRANSIENT
    )
    pools = transient_pools(spec)
    total_devices = len(INLINE_HOSTS) * INLINE_OSDS_PER_HOST
    # 2x headroom covers chunk manifests and hash-placement skew; devices
    # hold whole blocks and at least two chunks each.
    per_device = math.ceil(retained * 2.0 / total_devices)
    per_device = max(per_device, 2 * INLINE_CHUNK_SIZE)
    per_device = math.ceil(per_device / _BLOCK) * _BLOCK
    return DeploymentPlan(
        cluster_id=cluster_id,
        hosts=list(INLINE_HOSTS),
        device_capacity_bytes=per_device,
        shared_dir=Path(shared_dir),
        osds_per_host=INLINE_OSDS_PER_HOST,
        pool=PoolSpec(pools[0], 1, INLINE_CHUNK_SIZE) if pools else None,
    )


def run_with_inline_cluster(
    spec: PipelineSpec,
    shared_dir: Path,
    cluster_id: str = "pipeline",
) -> PipelineReport:
    """Deploy a transient cluster, run the pipeline, and tear it down.

    Deploy and remove wall seconds land in the report rows, mirroring how
    the reference workflow bills cluster lifecycle against job time.
    """
    spec.validate()
    plan = inline_plan(spec, shared_dir, cluster_id)
    deploy_report = deploy(plan)
    try:
        ring = Keyring.read_dir(Path(shared_dir), cluster_id)
        secret = ring.secret("client")
        monitor = MonitorClient(status(cluster_id)["monitor_address"], secret)
        for extra in transient_pools(spec)[1:]:
            monitor.create_pool(PoolSpec(extra, 1, INLINE_CHUNK_SIZE))
        report = run_pipeline(spec, store_client=StoreClient(monitor, secret))
    finally:
        remove_report = remove(cluster_id)
    report.deploy_seconds = deploy_report.total_seconds
    report.remove_seconds = remove_report.total_seconds
    report.total_seconds += report.deploy_seconds + report.remove_seconds
    return report
