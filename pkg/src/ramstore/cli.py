"""Operator entry point: cluster lifecycle, object access, pipelines, benches.

Exit codes are fixed: 0 success, 1 operational failure (cluster missing,
object missing, backend unreachable), 2 usage failure (malformed documents
or flag combinations the tools refuse by contract). Structured output is
JSON on stdout; human tables precede it where a table exists.

``deploy`` owns its cluster for the life of the process: by default it
runs the full deploy/remove lifecycle and exits; with ``--hold`` it keeps
serving until a signal arrives (or another invocation runs ``remove``,
which finds the holder through a pid file in the cluster's runtime
directory and signals it).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import tempfile
import threading
import time
from pathlib import Path

from . import bench as bench_mod
from . import orchestrator
from .control_plane import Keyring, MonitorClient
from .errors import (
    EmptyPipeline,
    InvalidPlan,
    MismatchedRows,
    SingleStage,
    StoreError,
    TooFewSamples,
    UnknownCluster,
)
from .orchestrator.agent import descriptor_path, runtime_root
from .pipeline import (
    PipelineSpec,
    REFERENCE_TOTAL_MINUTES,
    io_overhead_reduction,
    make_preset_spec,
    run_pipeline,
    run_with_inline_cluster,
    time_reduction,
    transient_pools,
)
from .store import StoreClient
from .util import parse_size, read_json

USAGE_ERRORS = (InvalidPlan, EmptyPipeline, SingleStage, TooFewSamples, MismatchedRows)

_PIDFILE = "cli.pid"

log = logging.getLogger("ramstore.cli")


# ------------------------------------------------------------ plumbing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramstore",
        description="Transient RAM-backed object store: deploy, use, measure.",
    )
    parser.add_argument("--config", help="JSON file with default flag values")
    parser.add_argument("--shared-dir", help="cluster shared directory")
    parser.add_argument("--cluster-id", help="cluster to operate on")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deploy", help="deploy a cluster from a plan document")
    p.add_argument("plan", help="path to the JSON deployment plan")
    p.add_argument(
        "--hold",
        action="store_true",
        help="keep serving until SIGINT/SIGTERM instead of removing on exit",
    )

    sub.add_parser("remove", help="tear down the cluster named by --cluster-id")
    sub.add_parser("status", help="report cluster state")

    p = sub.add_parser("put", help="store a file as an object")
    p.add_argument("pool")
    p.add_argument("name")
    p.add_argument("file", help="input file path")

    p = sub.add_parser("get", help="fetch an object")
    p.add_argument("pool")
    p.add_argument("name")
    p.add_argument("-o", "--output", help="write here instead of stdout")

    p = sub.add_parser("delete", help="delete an object")
    p.add_argument("pool")
    p.add_argument("name")

    p = sub.add_parser("ls", help="list objects in a pool (name<TAB>size)")
    p.add_argument("pool")

    p = sub.add_parser("pipeline", help="run a staged pipeline and print its report")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", help="pipeline spec JSON file")
    source.add_argument("--preset", choices=["paper-scaled"], help="built-in workload")
    p.add_argument("--mode", choices=["baseline", "transient"], default="baseline",
                   help="preset routing (ignored with --compare)")
    p.add_argument("--compare", action="store_true",
                   help="run baseline and transient, then print both reductions")
    p.add_argument("--workdir", help="directory for central data and cluster state "
                                     "(default: a temporary directory, removed after)")
    p.add_argument("--pool", default="intermediate", help="transient pool name for presets")

    p = sub.add_parser("bench", help="throughput sweep over block sizes")
    p.add_argument("--backends", default="ram",
                   help="comma-separated: ram,central (default ram)")
    p.add_argument("--blocks", default="4K,40K,400K,4M,40M,400M",
                   help="comma-separated block sizes; K/M = 2^10/2^20")
    p.add_argument("--total", default="400M", help="bytes per timed run (default 400M)")
    p.add_argument("--repeats", type=int, default=3, help="runs per block size (default 3)")
    p.add_argument("--direction", choices=["read", "write"], default="write")
    p.add_argument("--central-dir", help="directory for the central backend "
                                         "(default: a temporary directory)")
    p.add_argument("--throttle", help="central backend rate limit in bytes/second "
                                      "(accepts K/M suffixes)")
    return parser


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _require(value: str | None, flag: str) -> str:
    if not value:
        raise InvalidPlan(f"{flag} is required for this command")
    return value


class _Settings:
    """Flag > config-file > default resolution for the global options."""

    def __init__(self, args: argparse.Namespace):
        if args.config:
            try:
                config = read_json(Path(args.config))
            except (OSError, ValueError) as exc:
                raise InvalidPlan(f"unreadable config {args.config}: {exc}") from exc
        else:
            config = {}
        if not isinstance(config, dict):
            raise InvalidPlan(f"config file {args.config} must hold a JSON object")
        self.shared_dir = args.shared_dir or config.get("shared_dir")
        self.cluster_id = args.cluster_id or config.get("cluster_id")
        self.verbose = args.verbose or bool(config.get("verbose"))


def _store_client(settings: _Settings) -> StoreClient:
    shared = Path(_require(settings.shared_dir, "--shared-dir"))
    cluster_id = _require(settings.cluster_id, "--cluster-id")
    descriptor = descriptor_path(shared, cluster_id)
    if not descriptor.exists():
        raise UnknownCluster(f"no cluster {cluster_id!r} under {shared}")
    address = read_json(descriptor)["monitor_address"]
    secret = Keyring.read_dir(shared, cluster_id).secret("client")
    return StoreClient(MonitorClient(address, secret), secret)


# ------------------------------------------------------------ lifecycle

def cmd_deploy(args: argparse.Namespace, settings: _Settings) -> int:
    try:
        doc = read_json(Path(args.plan))
    except (OSError, ValueError) as exc:
        raise InvalidPlan(f"unreadable plan {args.plan}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidPlan(f"plan {args.plan} must hold a JSON object")
    if settings.shared_dir:
        doc.setdefault("shared_dir", settings.shared_dir)
    plan = orchestrator.DeploymentPlan.from_doc(doc)

    report = orchestrator.deploy(plan)
    pidfile = runtime_root(plan.shared_dir, plan.cluster_id) / _PIDFILE
    pidfile.write_text(str(os.getpid()))
    print(report.render())
    _emit(report.to_doc())

    if args.hold:
        stop = threading.Event()
        for signum in (signal.SIGINT, signal.SIGTERM):
            signal.signal(signum, lambda *_: stop.set())
        print(f"cluster {plan.cluster_id!r} serving; signal to remove", file=sys.stderr)
        stop.wait()

    removal = orchestrator.remove(plan.cluster_id)
    print(removal.render())
    _emit(removal.to_doc())
    return 0


def cmd_remove(settings: _Settings) -> int:
    cluster_id = _require(settings.cluster_id, "--cluster-id")
    try:
        report = orchestrator.remove(cluster_id)
    except UnknownCluster:
        return _remove_via_holder(settings, cluster_id)
    print(report.render())
    _emit(report.to_doc())
    return 0


def _remove_via_holder(settings: _Settings, cluster_id: str) -> int:
    """Signal the process holding this cluster and wait for it to clean up."""
    shared = Path(_require(settings.shared_dir, "--shared-dir"))
    descriptor = descriptor_path(shared, cluster_id)
    pidfile = runtime_root(shared, cluster_id) / _PIDFILE
    if not descriptor.exists():
        raise UnknownCluster(f"unknown cluster {cluster_id!r}")
    # the holder writes its pid just after publishing the descriptor;
    # give a mid-deploy holder a moment to finish
    grace = time.monotonic() + 5.0
    while not pidfile.exists() and time.monotonic() < grace:
        time.sleep(0.1)
    if not pidfile.exists():
        raise UnknownCluster(f"cluster {cluster_id!r} has no holder pid on record")
    pid = int(pidfile.read_text().strip())
    try:
        os.kill(pid, signal.SIGTERM)
    except ProcessLookupError:
        raise StoreError(
            f"cluster {cluster_id!r} holder (pid {pid}) is gone but its state "
            f"remains under {shared}; inspect and clean up manually"
        ) from None
    deadline = time.monotonic() + 30.0
    while time.monotonic() < deadline:
        if not descriptor.exists():
            _emit({"cluster_id": cluster_id, "action": "remove", "signaled_pid": pid})
            return 0
        time.sleep(0.1)
    raise StoreError(f"holder pid {pid} did not release {cluster_id!r} within 30s")


def cmd_status(settings: _Settings) -> int:
    cluster_id = _require(settings.cluster_id, "--cluster-id")
    summary = orchestrator.status(cluster_id)
    if summary.get("deployed"):
        _emit(summary)
        return 0
    # not deployed by this process; look for another process's cluster
    if settings.shared_dir:
        shared = Path(settings.shared_dir)
        descriptor = descriptor_path(shared, cluster_id)
        if descriptor.exists():
            address = read_json(descriptor)["monitor_address"]
            secret = Keyring.read_dir(shared, cluster_id).secret("client")
            cmap = MonitorClient(address, secret).get_map()
            up = len(cmap.up_osds())
            _emit({
                "cluster_id": cluster_id,
                "deployed": True,
                "monitor_address": address,
                "epoch": cmap.epoch,
                "osds_up": up,
                "osds_down": len(cmap.osds) - up,
                "pools": [p.name for p in cmap.pools],
            })
            return 0
    _emit({"cluster_id": cluster_id, "deployed": False})
    return 1


# ------------------------------------------------------------ objects

def cmd_put(args: argparse.Namespace, settings: _Settings) -> int:
    data = Path(args.file).read_bytes()
    manifest = _store_client(settings).put_object(args.pool, args.name, data)
    _emit({
        "pool": args.pool,
        "name": args.name,
        "bytes": manifest.total_size_bytes,
        "chunks": len(manifest.chunk_names),
    })
    return 0


def cmd_get(args: argparse.Namespace, settings: _Settings) -> int:
    data, _meta = _store_client(settings).get_object(args.pool, args.name)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    return 0


def cmd_delete(args: argparse.Namespace, settings: _Settings) -> int:
    _store_client(settings).delete_object(args.pool, args.name)
    _emit({"pool": args.pool, "deleted": args.name})
    return 0


def cmd_ls(args: argparse.Namespace, settings: _Settings) -> int:
    for name, size in sorted(_store_client(settings).list_objects(args.pool)):
        print(f"{name}\t{size}")
    return 0


# ------------------------------------------------------------ pipeline

def _pipeline_spec(args: argparse.Namespace, mode: str, central_dir: Path) -> PipelineSpec:
    if args.preset:
        return make_preset_spec(args.preset, mode, str(central_dir), pool=args.pool)
    try:
        doc = read_json(Path(args.spec))
    except (OSError, ValueError) as exc:
        raise InvalidPlan(f"unreadable spec {args.spec}: {exc}") from exc
    return PipelineSpec.from_doc(doc)


def _run_one(spec: PipelineSpec, shared: Path):
    if transient_pools(spec):
        return run_with_inline_cluster(spec, shared, "pipeline")
    return run_pipeline(spec)


def cmd_pipeline(args: argparse.Namespace, settings: _Settings) -> int:
    own_workdir = args.workdir is None
    workdir = Path(args.workdir or tempfile.mkdtemp(prefix="pipeline-"))
    central = workdir / "central"
    shared = workdir / "shared"
    central.mkdir(parents=True, exist_ok=True)
    shared.mkdir(parents=True, exist_ok=True)
    try:
        if not args.compare:
            report = _run_one(_pipeline_spec(args, args.mode, central), shared)
            print(report.render())
            _emit(report.to_doc())
            return 0

        if not args.preset:
            raise InvalidPlan("--compare runs both preset modes; use it with --preset")
        baseline = _run_one(_pipeline_spec(args, "baseline", central), shared)
        transient = _run_one(_pipeline_spec(args, "transient", central), shared)
        print("baseline:")
        print(baseline.render())
        print()
        print("transient:")
        print(transient.render())
        print()
        io_cut = io_overhead_reduction(baseline.ledger, transient.ledger)
        # headline times come from the reference run totals; desk-scale
        # walls measure this machine, not the modeled cluster
        time_cut = time_reduction(*REFERENCE_TOTAL_MINUTES)
        print(f"I/O overhead reduction: {io_cut:.2f}%")
        print(f"Time reduction: {time_cut:.2f}%")
        _emit({
            "io_overhead_reduction_percent": io_cut,
            "time_reduction_percent": time_cut,
            "baseline": baseline.to_doc(),
            "transient": transient.to_doc(),
        })
        return 0
    finally:
        if own_workdir:
            import shutil

            shutil.rmtree(workdir, ignore_errors=True)


# ------------------------------------------------------------ bench

def cmd_bench(args: argparse.Namespace) -> int:
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    if not backends:
        raise InvalidPlan("--backends must name at least one backend")
    try:
        blocks = tuple(parse_size(b) for b in args.blocks.split(","))
        total = parse_size(args.total)
        throttle = float(parse_size(args.throttle)) if args.throttle else None
    except ValueError as exc:
        raise InvalidPlan(f"bad size value: {exc}") from exc

    own_dir = args.central_dir is None and "central" in backends
    central_dir = args.central_dir or (tempfile.mkdtemp(prefix="bench-") if own_dir else None)
    columns: dict[str, list[bench_mod.SweepRow]] = {}
    try:
        for backend in backends:
            spec = bench_mod.SweepSpec(
                backend=backend,
                block_sizes=blocks,
                total_bytes_per_run=total,
                repeats=args.repeats,
                direction=args.direction,
                central_dir=central_dir,
                throttle_bytes_per_second=throttle,
            )
            columns[backend] = bench_mod.run_sweep(spec)
    finally:
        if own_dir and central_dir:
            import shutil

            shutil.rmtree(central_dir, ignore_errors=True)

    print(bench_mod.render_table(columns))
    _emit({
        "direction": args.direction,
        "total_bytes_per_run": total,
        "repeats": args.repeats,
        "columns": {label: [row.to_doc() for row in rows] for label, rows in columns.items()},
    })
    return 0


# ------------------------------------------------------------ dispatch

def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        settings = _Settings(args)
        logging.basicConfig(
            level=logging.DEBUG if settings.verbose else logging.WARNING,
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "deploy":
            return cmd_deploy(args, settings)
        if args.command == "remove":
            return cmd_remove(settings)
        if args.command == "status":
            return cmd_status(settings)
        if args.command == "put":
            return cmd_put(args, settings)
        if args.command == "get":
            return cmd_get(args, settings)
        if args.command == "delete":
            return cmd_delete(args, settings)
        if args.command == "ls":
            return cmd_ls(args, settings)
        if args.command == "pipeline":
            return cmd_pipeline(args, settings)
        if args.command == "bench":
            return cmd_bench(args)
        parser.error(f"unknown command {args.command!r}")
        return 2
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
