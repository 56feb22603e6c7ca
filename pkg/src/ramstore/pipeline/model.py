"""Pipeline data model: backend routing, stage specs, and byte-exact ledgers.

A pipeline is an ordered list of stages over synthetic data. Each stage
reads its predecessor's output from one backend and writes its own output
to another; the ledger records every byte moved, per stage and per backend
kind, with no estimation anywhere. The reduction arithmetic at the bottom
of this module operates purely on ledgers and wall-clock totals, so it can
be fed either measured runs or externally supplied figures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import EmptyPipeline, InvalidPlan, SingleStage, ZeroBaseline

CENTRAL = "central"
TRANSIENT = "transient"


@dataclass(frozen=True)
class BackendRef:
    """Where a stage reads or writes.

    ``central`` refs name a directory (plus an optional byte-rate
    throttle); ``transient`` refs name a pool in a deployed cluster.
    """

    kind: str
    path: str | None = None
    pool: str | None = None
    throttle_bytes_per_second: float | None = None

    def validate(self) -> "BackendRef":
        if self.kind not in (CENTRAL, TRANSIENT):
            raise InvalidPlan(f"unknown backend kind {self.kind!r}")
        if self.kind == CENTRAL and not self.path:
            raise InvalidPlan("central backend ref needs a directory path")
        if self.kind == TRANSIENT and not self.pool:
            raise InvalidPlan("transient backend ref needs a pool name")
        if self.kind == TRANSIENT and self.throttle_bytes_per_second is not None:
            raise InvalidPlan("throttle applies to the central backend only")
        if self.throttle_bytes_per_second is not None and self.throttle_bytes_per_second <= 0:
            raise InvalidPlan("throttle must be positive when set")
        return self

    def to_doc(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.path is not None:
            doc["path"] = self.path
        if self.pool is not None:
            doc["pool"] = self.pool
        if self.throttle_bytes_per_second is not None:
            doc["throttle_bytes_per_second"] = self.throttle_bytes_per_second
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "BackendRef":
        return cls(
            kind=doc["kind"],
            path=doc.get("path"),
            pool=doc.get("pool"),
            throttle_bytes_per_second=doc.get("throttle_bytes_per_second"),
        ).validate()


@dataclass(frozen=True)
class StageSpec:
    """One pipeline stage.

    ``read_from=None`` means the stage consumes the pipeline's initial
    input from the input backend; every later stage reads exactly what its
    predecessor wrote.
    """

    name: str
    read_from: BackendRef | None
    write_to: BackendRef
    output_bytes: int
    synthetic_compute_seconds: float = 0.0

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "read_from": self.read_from.to_doc() if self.read_from else None,
            "write_to": self.write_to.to_doc(),
            "output_bytes": self.output_bytes,
            "synthetic_compute_seconds": self.synthetic_compute_seconds,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "StageSpec":
        read_from = doc.get("read_from")
        return cls(
            name=doc["name"],
            read_from=BackendRef.from_doc(read_from) if read_from else None,
            write_to=BackendRef.from_doc(doc["write_to"]),
            output_bytes=int(doc["output_bytes"]),
            synthetic_compute_seconds=float(doc.get("synthetic_compute_seconds", 0.0)),
        )


@dataclass
class PipelineSpec:
    input_bytes: int
    input_backend: BackendRef
    stages: list[StageSpec]
    parallelism: int = 1
    seed: str = "pipeline"

    def validate(self) -> "PipelineSpec":
        if not self.stages:
            raise EmptyPipeline("a pipeline needs at least one stage")
        if self.input_bytes < 0:
            raise InvalidPlan("input_bytes must be >= 0")
        if self.parallelism < 1:
            raise InvalidPlan(f"parallelism must be >= 1, got {self.parallelism}")
        self.input_backend.validate()
        if self.input_backend.kind != CENTRAL:
            raise InvalidPlan("the initial input lives on the central backend")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise InvalidPlan("stage names must be unique")
        for k, stage in enumerate(self.stages):
            if not stage.name:
                raise InvalidPlan("stage names must be non-empty")
            if stage.output_bytes < 0:
                raise InvalidPlan(f"stage {stage.name!r}: output_bytes must be >= 0")
            if stage.synthetic_compute_seconds < 0:
                raise InvalidPlan(f"stage {stage.name!r}: compute seconds must be >= 0")
            stage.write_to.validate()
            if k == 0:
                if stage.read_from is not None:
                    raise InvalidPlan("stage 1 reads the initial input (read_from must be null)")
            else:
                if stage.read_from is None:
                    raise InvalidPlan(
                        f"stage {stage.name!r} must read its predecessor's output"
                    )
                stage.read_from.validate()
        if self.stages[-1].write_to.kind != CENTRAL:
            raise InvalidPlan("the last stage must write to the central store")
        return self

    def to_doc(self) -> dict:
        return {
            "input_bytes": self.input_bytes,
            "input_backend": self.input_backend.to_doc(),
            "stages": [s.to_doc() for s in self.stages],
            "parallelism": self.parallelism,
            "seed": self.seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PipelineSpec":
        try:
            spec = cls(
                input_bytes=int(doc["input_bytes"]),
                input_backend=BackendRef.from_doc(doc["input_backend"]),
                stages=[StageSpec.from_doc(s) for s in doc["stages"]],
                parallelism=int(doc.get("parallelism", 1)),
                seed=str(doc.get("seed", "pipeline")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPlan(f"undecodable pipeline spec: {exc}") from exc
        return spec.validate()


@dataclass(frozen=True)
class LedgerRow:
    stage: str
    backend: str  # "central" | "transient"
    bytes_read: int = 0
    bytes_written: int = 0

    def to_doc(self) -> dict:
        return {
            "stage": self.stage,
            "backend": self.backend,
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
        }


@dataclass
class IoLedger:
    """Exact per-stage, per-backend byte accounting.

    ``initial_input_bytes`` marks how much of the central read total was
    the pipeline's initial input; overhead arithmetic excludes it, since
    the input dataset pre-exists regardless of how intermediates are
    routed.
    """

    rows: list[LedgerRow] = field(default_factory=list)
    initial_input_bytes: int = 0

    def add(self, stage: str, backend: str, *, bytes_read: int = 0, bytes_written: int = 0) -> None:
        self.rows.append(LedgerRow(stage, backend, bytes_read, bytes_written))

    def totals(self) -> dict[str, tuple[int, int]]:
        """Backend kind -> (bytes_read, bytes_written), summed over rows."""
        out: dict[str, tuple[int, int]] = {CENTRAL: (0, 0), TRANSIENT: (0, 0)}
        for row in self.rows:
            read, written = out.get(row.backend, (0, 0))
            out[row.backend] = (read + row.bytes_read, written + row.bytes_written)
        return out

    def total_read(self, backend: str) -> int:
        return self.totals().get(backend, (0, 0))[0]

    def total_written(self, backend: str) -> int:
        return self.totals().get(backend, (0, 0))[1]

    def central_overhead_bytes(self) -> int:
        """Central bytes written plus central re-reads, input read excluded."""
        read, written = self.totals()[CENTRAL]
        return written + (read - self.initial_input_bytes)

    def to_doc(self) -> dict:
        return {
            "rows": [row.to_doc() for row in self.rows],
            "initial_input_bytes": self.initial_input_bytes,
            "totals": {
                kind: {"bytes_read": r, "bytes_written": w}
                for kind, (r, w) in sorted(self.totals().items())
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "IoLedger":
        ledger = cls(
            rows=[
                LedgerRow(
                    stage=row["stage"],
                    backend=row["backend"],
                    bytes_read=int(row["bytes_read"]),
                    bytes_written=int(row["bytes_written"]),
                )
                for row in doc["rows"]
            ],
            initial_input_bytes=int(doc.get("initial_input_bytes", 0)),
        )
        stated = doc.get("totals")
        if stated is not None:
            actual = {
                kind: {"bytes_read": r, "bytes_written": w}
                for kind, (r, w) in ledger.totals().items()
            }
            for kind, entry in stated.items():
                if actual.get(kind) != dict(entry):
                    raise InvalidPlan(
                        f"ledger totals for {kind!r} do not match its rows"
                    )
        return ledger


@dataclass
class PipelineReport:
    ledger: IoLedger
    stage_seconds: list[tuple[str, float]] = field(default_factory=list)
    deploy_seconds: float = 0.0
    remove_seconds: float = 0.0
    total_seconds: float = 0.0

    def to_doc(self) -> dict:
        return {
            "ledger": self.ledger.to_doc(),
            "stage_seconds": [{"stage": n, "seconds": s} for n, s in self.stage_seconds],
            "deploy_seconds": self.deploy_seconds,
            "remove_seconds": self.remove_seconds,
            "total_seconds": self.total_seconds,
        }

    def render(self) -> str:
        """One row per step (Deploy, each stage, Remove) plus the total."""
        width = max([len("Deploy"), len("Remove"), len("Total")]
                    + [len(name) for name, _ in self.stage_seconds])
        lines = [f"{'Step':<{width}}  {'Seconds':>10}"]

        def row(label: str, seconds: float) -> str:
            return f"{label:<{width}}  {seconds:>10.3f}"

        lines.append(row("Deploy", self.deploy_seconds))
        for name, seconds in self.stage_seconds:
            lines.append(row(name, seconds))
        lines.append(row("Remove", self.remove_seconds))
        lines.append(row("Total", self.total_seconds))
        return "\n".join(lines)


def make_baseline_spec(
    input_bytes: int,
    stage_output_sizes: list[int],
    central: BackendRef,
    *,
    stage_names: list[str] | None = None,
    compute_seconds: list[float] | None = None,
    parallelism: int = 1,
    seed: str = "pipeline",
) -> PipelineSpec:
    """Every stage reads from and writes to the central store."""
    if not stage_output_sizes:
        raise EmptyPipeline("baseline pipeline needs at least one stage")
    names = _stage_names(stage_names, len(stage_output_sizes))
    compute = _compute_seconds(compute_seconds, len(stage_output_sizes))
    central.validate()
    stages = [
        StageSpec(
            name=names[k],
            read_from=None if k == 0 else central,
            write_to=central,
            output_bytes=size,
            synthetic_compute_seconds=compute[k],
        )
        for k, size in enumerate(stage_output_sizes)
    ]
    return PipelineSpec(
        input_bytes=input_bytes,
        input_backend=central,
        stages=stages,
        parallelism=parallelism,
        seed=seed,
    ).validate()


def make_transient_spec(
    input_bytes: int,
    stage_output_sizes: list[int],
    central: BackendRef,
    transient: BackendRef,
    *,
    stage_names: list[str] | None = None,
    compute_seconds: list[float] | None = None,
    parallelism: int = 1,
    seed: str = "pipeline",
) -> PipelineSpec:
    """All bar the last stage write to the transient store.

    Stage 1 reads the initial input from central; stages 2..n read the
    transient store; stage n writes its final output back to central.
    """
    if not stage_output_sizes:
        raise EmptyPipeline("transient pipeline needs at least one stage")
    if len(stage_output_sizes) < 2:
        raise SingleStage("transient routing needs at least two stages")
    names = _stage_names(stage_names, len(stage_output_sizes))
    compute = _compute_seconds(compute_seconds, len(stage_output_sizes))
    central.validate()
    transient.validate()
    if transient.kind != TRANSIENT:
        raise InvalidPlan("intermediate backend must be transient")
    last = len(stage_output_sizes) - 1
    stages = [
        StageSpec(
            name=names[k],
            read_from=None if k == 0 else transient,
            write_to=central if k == last else transient,
            output_bytes=size,
            synthetic_compute_seconds=compute[k],
        )
        for k, size in enumerate(stage_output_sizes)
    ]
    return PipelineSpec(
        input_bytes=input_bytes,
        input_backend=central,
        stages=stages,
        parallelism=parallelism,
        seed=seed,
    ).validate()


def io_overhead_reduction(baseline: IoLedger, transient: IoLedger) -> float:
    """Percentage drop in central I/O overhead (writes + intermediate re-reads)."""
    base = baseline.central_overhead_bytes()
    if base <= 0:
        raise ZeroBaseline("baseline ledger has no central overhead to reduce")
    return (1.0 - transient.central_overhead_bytes() / base) * 100.0


def time_reduction(baseline_total: float, transient_total: float) -> float:
    """Percentage drop in total wall time; units cancel, any pair works."""
    if baseline_total <= 0:
        raise ZeroBaseline("baseline total time must be positive")
    return (1.0 - transient_total / baseline_total) * 100.0


def _stage_names(names: list[str] | None, count: int) -> list[str]:
    if names is None:
        return [f"stage{k + 1}" for k in range(count)]
    if len(names) != count:
        raise InvalidPlan(f"expected {count} stage names, got {len(names)}")
    return list(names)


def _compute_seconds(compute: list[float] | None, count: int) -> list[float]:
    if compute is None:
        return [0.0] * count
    if len(compute) != count:
        raise InvalidPlan(f"expected {count} compute durations, got {len(compute)}")
    return list(compute)
