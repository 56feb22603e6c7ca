"""Throughput sweeps over backends across block sizes, dd style.

A sweep times repeated whole-buffer transfers at each block size and
reports mean ± sample standard deviation in a fixed-format table. Desk
scale caveat: absolute figures reflect this process and machine, not any
device ceiling; the tool exists for orderings (RAM vs a throttled central
directory) and for the aggregation arithmetic, which is why raw samples
ride along in every row.
"""

from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BackendUnavailable, InvalidPlan, MismatchedRows, TooFewSamples
from .ram_backend import DeviceRegistry
from .util import TokenBucket, deterministic_bytes, format_size

RAM = "ram"
CENTRAL = "central"

DEFAULT_BLOCK_SIZES = (4 << 10, 40 << 10, 400 << 10, 4 << 20, 40 << 20, 400 << 20)
DEFAULT_REPEATS = 3

_DEVICE_BLOCK = 4096


@dataclass(frozen=True)
class SweepSpec:
    backend: str
    block_sizes: tuple[int, ...] = DEFAULT_BLOCK_SIZES
    total_bytes_per_run: int = 400 << 20
    repeats: int = DEFAULT_REPEATS
    direction: str = "write"
    central_dir: str | None = None
    throttle_bytes_per_second: float | None = None

    def validate(self) -> "SweepSpec":
        if self.backend not in (RAM, CENTRAL):
            raise InvalidPlan(f"backend must be '{RAM}' or '{CENTRAL}', got {self.backend!r}")
        if self.direction not in ("read", "write"):
            raise InvalidPlan(f"direction must be 'read' or 'write', got {self.direction!r}")
        if not self.block_sizes:
            raise InvalidPlan("block_sizes must be non-empty")
        if any(b <= 0 for b in self.block_sizes):
            raise InvalidPlan(f"block sizes must be positive: {self.block_sizes}")
        if self.repeats < 2:
            raise TooFewSamples(
                f"{self.repeats} repeat(s) leave the standard deviation undefined"
            )
        if self.total_bytes_per_run < max(self.block_sizes):
            raise InvalidPlan(
                f"total_bytes_per_run {self.total_bytes_per_run} is smaller than "
                f"the largest block {max(self.block_sizes)}"
            )
        if self.backend == CENTRAL and not self.central_dir:
            raise BackendUnavailable("central sweeps need a central_dir")
        return self


@dataclass(frozen=True)
class SweepRow:
    block_size: int
    mean_bytes_per_second: float
    std_bytes_per_second: float
    samples: tuple[float, ...] = ()

    def to_doc(self) -> dict:
        return {
            "block_size": self.block_size,
            "mean_bytes_per_second": self.mean_bytes_per_second,
            "std_bytes_per_second": self.std_bytes_per_second,
            "samples": list(self.samples),
        }


def aggregate(samples: list[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation of throughput samples."""
    if len(samples) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(samples)}")
    return statistics.mean(samples), statistics.stdev(samples)


class _RamTarget:
    def __init__(self, spec: SweepSpec):
        capacity = -(-spec.total_bytes_per_run // _DEVICE_BLOCK) * _DEVICE_BLOCK
        self._registry = DeviceRegistry(max_total_bytes=capacity)
        self._device = self._registry.create_device(capacity, _DEVICE_BLOCK, "bench")

    def write_run(self, block: bytes, count: int, tail: bytes) -> None:
        write_at = self._device.write_at
        size = len(block)
        for i in range(count):
            write_at(i * size, block)
        if tail:
            write_at(count * size, tail)

    def read_run(self, block_size: int, count: int, tail_bytes: int) -> None:
        read_at = self._device.read_at
        for i in range(count):
            read_at(i * block_size, block_size)
        if tail_bytes:
            read_at(count * block_size, tail_bytes)

    def close(self) -> None:
        self._registry.destroy_all()


class _CentralTarget:
    def __init__(self, spec: SweepSpec):
        root = Path(spec.central_dir or "")
        if not root.is_dir():
            raise BackendUnavailable(f"central directory {root} does not exist")
        self._path = root / f"bench-{os.getpid()}.dat"
        # a one-block burst keeps short runs paced at the configured rate
        self._bucket = (
            TokenBucket(spec.throttle_bytes_per_second, burst_bytes=_DEVICE_BLOCK)
            if spec.throttle_bytes_per_second
            else None
        )

    def write_run(self, block: bytes, count: int, tail: bytes) -> None:
        with open(self._path, "wb") as fh:
            for _ in range(count):
                if self._bucket:
                    self._bucket.acquire(len(block))
                fh.write(block)
            if tail:
                if self._bucket:
                    self._bucket.acquire(len(tail))
                fh.write(tail)
            fh.flush()

    def read_run(self, block_size: int, count: int, tail_bytes: int) -> None:
        with open(self._path, "rb") as fh:
            for _ in range(count):
                if self._bucket:
                    self._bucket.acquire(block_size)
                fh.read(block_size)
            if tail_bytes:
                if self._bucket:
                    self._bucket.acquire(tail_bytes)
                fh.read(tail_bytes)

    def close(self) -> None:
        self._path.unlink(missing_ok=True)


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """Timed transfers per block size; reads get an untimed priming write."""
    spec.validate()
    target = _RamTarget(spec) if spec.backend == RAM else _CentralTarget(spec)
    rows: list[SweepRow] = []
    try:
        for block_size in spec.block_sizes:
            # a short tail block keeps bytes moved == total_bytes_per_run exactly
            count, rest = divmod(spec.total_bytes_per_run, block_size)
            block = deterministic_bytes(f"bench:{block_size}", block_size)
            tail = block[:rest]
            if spec.direction == "read":
                target.write_run(block, count, tail)  # priming, untimed
            samples = []
            for _ in range(spec.repeats):
                started = time.monotonic()
                if spec.direction == "write":
                    target.write_run(block, count, tail)
                else:
                    target.read_run(block_size, count, rest)
                samples.append(spec.total_bytes_per_run / (time.monotonic() - started))
            mean, std = aggregate(samples)
            rows.append(SweepRow(block_size, mean, std, tuple(samples)))
    finally:
        target.close()
    return rows


def render_cell(mean: float, std: float) -> str:
    """GB/s with three decimals, the table's fixed cell format."""
    return f"{mean / 1e9:.3f} ± {std / 1e9:.3f}"


def render_table(columns: dict[str, list[SweepRow]]) -> str:
    """One row per block size, one value column per backend label.

    Every column must cover the same block sizes in the same order; the
    per-row maximum mean is starred (all of them, on a tie).
    """
    if not columns:
        raise MismatchedRows("no columns to render")
    labels = list(columns)
    first = [row.block_size for row in columns[labels[0]]]
    for label in labels[1:]:
        sizes = [row.block_size for row in columns[label]]
        if sizes != first:
            raise MismatchedRows(
                f"column {label!r} covers blocks {sizes}, expected {first}"
            )

    cells: list[list[str]] = []
    for i, block_size in enumerate(first):
        row_values = [columns[label][i] for label in labels]
        best = max(row.mean_bytes_per_second for row in row_values)
        rendered = [
            render_cell(row.mean_bytes_per_second, row.std_bytes_per_second)
            + (" *" if row.mean_bytes_per_second == best else "")
            for row in row_values
        ]
        cells.append([format_size(block_size)] + rendered)

    header = ["Block Size"] + labels
    widths = [len(h) for h in header]
    for row in cells:
        for c, text in enumerate(row):
            widths[c] = max(widths[c], len(text))

    def fmt(row: list[str]) -> str:
        return "  ".join(text.ljust(widths[c]) for c, text in enumerate(row)).rstrip()

    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in cells)
    return "\n".join(lines)
