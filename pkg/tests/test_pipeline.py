"""Pipeline ledgers, topologies, reduction arithmetic, and the preset."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from ramstore.errors import (
    BackendUnavailable,
    ChecksumMismatch,
    EmptyPipeline,
    InvalidPlan,
    SingleStage,
    ZeroBaseline,
)
from ramstore.pipeline import (
    BackendRef,
    IoLedger,
    PipelineSpec,
    REFERENCE_TOTAL_MINUTES,
    StageSpec,
    io_overhead_reduction,
    make_backend,
    make_baseline_spec,
    make_preset_spec,
    make_transient_spec,
    paper_scaled_sizes,
    run_pipeline,
    run_with_inline_cluster,
    time_reduction,
)
from ramstore.pipeline.backends import STRIPE_GRANULE, TransientBackend

MIB = 1 << 20


def central_ref(tmp_path: Path, name: str = "central") -> BackendRef:
    root = tmp_path / name
    root.mkdir(exist_ok=True)
    return BackendRef(kind="central", path=str(root))


def ledger_with_central(read: int, written: int, input_bytes: int = 0) -> IoLedger:
    ledger = IoLedger(initial_input_bytes=input_bytes)
    ledger.add("s", "central", bytes_read=read + input_bytes, bytes_written=written)
    return ledger


# --- reduction arithmetic ---

def test_time_reduction_reproduces_reference_totals():
    value = time_reduction(*REFERENCE_TOTAL_MINUTES)
    assert abs(value - 8.32) <= 0.01, f"time reduction {value} not within 8.32±0.01"


def test_time_reduction_examples():
    assert time_reduction(100.0, 100.0) == 0.0
    assert time_reduction(100.0, 25.0) == 75.0
    with pytest.raises(ZeroBaseline):
        time_reduction(0.0, 10.0)


def test_io_overhead_reduction_examples():
    same = ledger_with_central(read=40, written=60)
    assert io_overhead_reduction(same, same) == 0.0
    assert io_overhead_reduction(
        ledger_with_central(100, 100), ledger_with_central(40, 60)
    ) == 50.0
    assert io_overhead_reduction(
        ledger_with_central(50, 50), ledger_with_central(10, 15)
    ) == 75.0
    with pytest.raises(ZeroBaseline):
        io_overhead_reduction(ledger_with_central(0, 0), ledger_with_central(0, 0))


def test_overhead_excludes_initial_input_read():
    # 30 input bytes hide in the central read total but not in the overhead
    ledger = ledger_with_central(read=20, written=50, input_bytes=30)
    assert ledger.total_read("central") == 50
    assert ledger.central_overhead_bytes() == 70


# --- the paper-scaled preset ---

def test_paper_scaled_sizes_hit_the_anchored_totals():
    input_bytes, sizes = paper_scaled_sizes()
    assert input_bytes == round(42.346 * MIB)
    assert len(sizes) == 4
    intermediates, final = sizes[:3], sizes[3]
    assert final == round(57.042 * MIB)
    assert sum(intermediates) == round(243.858 / 2 * MIB), (
        f"intermediate split {intermediates} loses bytes"
    )
    # the two overheads the ledgers must land on, in exact bytes
    assert 2 * sum(intermediates) + final == round(300.900 * MIB)


def test_baseline_preset_ledger(tmp_path):
    spec = make_preset_spec("paper-scaled", "baseline", str(tmp_path / "central"))
    (tmp_path / "central").mkdir(exist_ok=True)
    report = run_pipeline(spec)
    ledger = report.ledger
    input_bytes, sizes = paper_scaled_sizes()
    assert ledger.totals()["transient"] == (0, 0)
    assert ledger.total_written("central") == sum(sizes)
    assert ledger.total_read("central") == input_bytes + sum(sizes[:3])
    assert ledger.initial_input_bytes == input_bytes
    assert ledger.central_overhead_bytes() == round(300.900 * MIB)


def test_transient_preset_against_baseline(tmp_path):
    central = tmp_path / "central"
    central.mkdir()
    shared = tmp_path / "shared"
    shared.mkdir()
    baseline = run_pipeline(make_preset_spec("paper-scaled", "baseline", str(central)))
    transient = run_with_inline_cluster(
        make_preset_spec("paper-scaled", "transient", str(central)),
        shared,
        "pipe-test",
    )
    input_bytes, sizes = paper_scaled_sizes()

    assert transient.ledger.central_overhead_bytes() == round(57.042 * MIB)
    # central traffic is the input read plus the final write, nothing else
    assert transient.ledger.total_read("central") == input_bytes
    assert transient.ledger.total_written("central") == sizes[3]
    # stages 1..3 never write centrally, by row
    for row in transient.ledger.rows:
        if row.stage != "reconstruct" and row.backend == "central":
            assert row.bytes_written == 0, f"central write leaked: {row}"

    reduction = io_overhead_reduction(baseline.ledger, transient.ledger)
    assert abs(reduction - 81.04) <= 0.01, f"reduction {reduction} misses 81.04±0.01"

    assert transient.deploy_seconds > 0 and transient.remove_seconds > 0
    assert transient.total_seconds >= sum(s for _, s in transient.stage_seconds)
    # no cluster residue
    assert list(shared.iterdir()) == []


def test_preset_rejects_unknowns(tmp_path):
    with pytest.raises(InvalidPlan):
        make_preset_spec("desk-scaled", "baseline", str(tmp_path))
    with pytest.raises(InvalidPlan):
        make_preset_spec("paper-scaled", "sideways", str(tmp_path))


# --- runner properties ---

def test_ledger_conservation_and_determinism(tmp_path):
    central = central_ref(tmp_path)
    rng = random.Random(0xC0FFEE)
    sizes = [rng.randrange(1, 3 * MIB) for _ in range(4)]
    spec = make_baseline_spec(5 * MIB + 27, sizes, central, seed="conserve")

    first = run_pipeline(spec)
    second = run_pipeline(spec)
    assert first.ledger == second.ledger, "identical spec+seed must give identical ledgers"

    reads = {row.stage: row.bytes_read for row in first.ledger.rows if row.bytes_read}
    writes = {row.stage: row.bytes_written for row in first.ledger.rows if row.bytes_written}
    names = [s.name for s in spec.stages]
    assert reads[names[0]] == spec.input_bytes
    for prev, cur in zip(names, names[1:]):
        assert reads[cur] == writes[prev], (
            f"stage {cur} read {reads[cur]} != {prev} wrote {writes[prev]}"
        )


def test_zero_byte_stages(tmp_path):
    spec = make_baseline_spec(0, [0, 0, 0], central_ref(tmp_path), seed="null")
    report = run_pipeline(spec)
    assert report.ledger.totals() == {"central": (0, 0), "transient": (0, 0)}
    assert len(report.stage_seconds) == 3


def test_single_stage_baseline_has_no_intermediate_reads(tmp_path):
    spec = make_baseline_spec(2 * MIB, [MIB], central_ref(tmp_path))
    ledger = run_pipeline(spec).ledger
    assert ledger.total_read("central") == 2 * MIB
    assert ledger.central_overhead_bytes() == MIB


def test_corrupted_read_raises_checksum_mismatch(tmp_path, monkeypatch):
    from ramstore.pipeline import backends as backends_mod

    original = backends_mod.CentralBackend.read

    def corrupting(self, name):
        data = original(self, name)
        if name == "alpha.out" and data:
            return b"\xff" + data[1:] if data[0] != 0xFF else b"\x00" + data[1:]
        return data

    monkeypatch.setattr(backends_mod.CentralBackend, "read", corrupting)
    spec = make_baseline_spec(
        MIB, [MIB, MIB], central_ref(tmp_path), stage_names=["alpha", "beta"]
    )
    with pytest.raises(ChecksumMismatch) as err:
        run_pipeline(spec)
    assert "beta" in str(err.value), f"mismatch should name the reading stage: {err.value}"


def test_compute_sleep_is_billed_to_the_stage(tmp_path):
    spec = make_baseline_spec(
        1024, [1024], central_ref(tmp_path), compute_seconds=[0.05]
    )
    report = run_pipeline(spec)
    assert report.stage_seconds[0][1] >= 0.05


# --- builders and validation ---

def test_builders_reject_empty_and_single():
    central = BackendRef(kind="central", path="/tmp")
    transient = BackendRef(kind="transient", pool="scratch")
    with pytest.raises(EmptyPipeline):
        make_baseline_spec(10, [], central)
    with pytest.raises(EmptyPipeline):
        make_transient_spec(10, [], central, transient)
    with pytest.raises(SingleStage):
        make_transient_spec(10, [10], central, transient)


def test_transient_builder_topology():
    central = BackendRef(kind="central", path="/tmp")
    transient = BackendRef(kind="transient", pool="scratch")
    spec = make_transient_spec(10, [1, 2, 3, 4], central, transient)
    kinds = [s.write_to.kind for s in spec.stages]
    assert kinds == ["transient", "transient", "transient", "central"]
    assert spec.stages[0].read_from is None
    assert all(s.read_from.kind == "transient" for s in spec.stages[1:])
    # two stages: first writes transient, second writes central
    two = make_transient_spec(10, [1, 2], central, transient)
    assert [s.write_to.kind for s in two.stages] == ["transient", "central"]


def test_spec_validation_rules():
    central = BackendRef(kind="central", path="/tmp")
    transient = BackendRef(kind="transient", pool="p")
    stage = StageSpec("only", None, transient, 1)
    with pytest.raises(InvalidPlan):
        PipelineSpec(1, central, [stage]).validate()  # last stage not central
    with pytest.raises(InvalidPlan):
        PipelineSpec(1, transient, [StageSpec("s", None, central, 1)]).validate()
    with pytest.raises(InvalidPlan):
        PipelineSpec(1, central, [StageSpec("s", None, central, 1)], parallelism=0).validate()
    dupe = [StageSpec("s", None, central, 1), StageSpec("s", central, central, 1)]
    with pytest.raises(InvalidPlan):
        PipelineSpec(1, central, dupe).validate()
    with pytest.raises(InvalidPlan):
        BackendRef(kind="lustre", path="/tmp").validate()
    with pytest.raises(InvalidPlan):
        BackendRef(kind="transient", pool="p", throttle_bytes_per_second=1.0).validate()
    with pytest.raises(EmptyPipeline):
        PipelineSpec(1, central, []).validate()


def test_spec_document_roundtrip(tmp_path):
    central = central_ref(tmp_path)
    transient = BackendRef(kind="transient", pool="scratch")
    spec = make_transient_spec(
        3 * MIB,
        [MIB, 2 * MIB, MIB // 2],
        central,
        transient,
        stage_names=["a", "b", "c"],
        compute_seconds=[0.0, 0.01, 0.0],
        parallelism=2,
        seed="roundtrip",
    )
    doc = json.loads(json.dumps(spec.to_doc()))
    assert PipelineSpec.from_doc(doc) == spec


def test_ledger_document_roundtrip_checks_totals():
    ledger = IoLedger(initial_input_bytes=7)
    ledger.add("a", "central", bytes_read=7)
    ledger.add("a", "transient", bytes_written=9)
    doc = ledger.to_doc()
    assert IoLedger.from_doc(json.loads(json.dumps(doc))) == ledger
    doc["totals"]["transient"]["bytes_written"] = 10
    with pytest.raises(InvalidPlan):
        IoLedger.from_doc(doc)


def test_transient_ref_without_cluster_is_unavailable():
    with pytest.raises(BackendUnavailable):
        make_backend(BackendRef(kind="transient", pool="scratch"))


def test_missing_central_dir_is_unavailable(tmp_path):
    with pytest.raises(BackendUnavailable):
        make_backend(BackendRef(kind="central", path=str(tmp_path / "absent")))


# --- transient striping (against an in-memory stub client) ---

class StubClient:
    def __init__(self):
        self.objects: dict[str, tuple[bytes, dict[str, str]]] = {}
        self.put_order: list[str] = []

    def put_object(self, pool, name, data, user_metadata=None):
        self.objects[name] = (bytes(data), dict(user_metadata or {}))
        self.put_order.append(name)

    def get_object(self, pool, name):
        if name not in self.objects:
            from ramstore.errors import NoSuchObject

            raise NoSuchObject(name)
        return self.objects[name]

    def stat_object(self, pool, name):
        if name not in self.objects:
            from ramstore.errors import NoSuchObject

            raise NoSuchObject(name)
        return object()


def test_stripe_roundtrip_and_head_written_last():
    rng = random.Random(1234)
    client = StubClient()
    backend = TransientBackend(client, "scratch")
    payload = rng.randbytes(2 * STRIPE_GRANULE + 12345)
    backend.write("big.out", payload)
    assert client.put_order[-1] == "big.out", "stripe head must commit last"
    parts = [n for n in client.objects if n.startswith("big.out.s")]
    assert len(parts) == 3, f"expected 3 parts, stored {sorted(client.objects)}"
    assert backend.read("big.out") == payload

    small = rng.randbytes(STRIPE_GRANULE // 2)
    backend.write("small.out", small)
    assert client.objects["small.out"][0] == small, "small payloads stay whole"
    assert backend.read("small.out") == small


def test_stripe_parallel_workers_roundtrip():
    rng = random.Random(99)
    client = StubClient()
    backend = TransientBackend(client, "scratch", workers=4)
    payload = rng.randbytes(3 * STRIPE_GRANULE + 1)
    backend.write("wide.out", payload)
    assert backend.read("wide.out") == payload
