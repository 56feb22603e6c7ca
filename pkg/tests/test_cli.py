"""End-to-end checks of the operator CLI: exit codes, output shapes, lifecycle."""

from __future__ import annotations

import json
import random
import subprocess
import sys
from pathlib import Path

import pytest

from ramstore import orchestrator
from ramstore.cli import main
from ramstore.control_plane import PoolSpec
from ramstore.orchestrator import DeploymentPlan

KIB = 1024
MIB = 1024 * 1024


def write_plan(tmp_path: Path, cluster_id: str, n_hosts: int = 2, **overrides) -> Path:
    shared = tmp_path / "shared"
    shared.mkdir(exist_ok=True)
    fields = dict(
        cluster_id=cluster_id,
        hosts=[f"host{i}" for i in range(n_hosts)],
        device_capacity_bytes=16 * MIB,
        shared_dir=str(shared),
        pool=PoolSpec("data", 1, 256 * KIB),
    )
    fields.update(overrides)
    doc = DeploymentPlan(**fields).to_doc()
    path = tmp_path / f"{cluster_id}.plan.json"
    path.write_text(json.dumps(doc))
    return path


def last_json(out: str) -> dict:
    lines = [ln for ln in out.splitlines() if ln.strip()]
    return json.loads(lines[-1])


# ------------------------------------------------------------ lifecycle

def test_deploy_runs_full_lifecycle(tmp_path, capsys):
    plan = write_plan(tmp_path, "lifecycle")
    rc = main(["deploy", str(plan)])
    out = capsys.readouterr().out
    assert rc == 0, f"deploy lifecycle exited {rc}"
    assert "deploy" in out and "remove" in out, f"missing report actions in:\n{out}"
    shared = tmp_path / "shared"
    leftovers = list(shared.iterdir())
    assert leftovers == [], f"shared dir not empty after lifecycle: {leftovers}"


def test_deploy_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["deploy", str(bad)])
    assert rc == 2, f"malformed plan should exit 2, got {rc}"
    assert "error:" in capsys.readouterr().err


def test_deploy_invalid_plan_doc_exits_2(tmp_path, capsys):
    bad = tmp_path / "empty-hosts.json"
    shared = tmp_path / "shared"
    shared.mkdir()
    bad.write_text(json.dumps({
        "cluster_id": "x",
        "hosts": [],
        "device_capacity_bytes": MIB,
        "shared_dir": str(shared),
    }))
    rc = main(["deploy", str(bad)])
    assert rc == 2, f"plan with no hosts should exit 2, got {rc}"
    capsys.readouterr()


def test_remove_unknown_cluster_exits_1(tmp_path, capsys):
    rc = main(["--shared-dir", str(tmp_path), "--cluster-id", "ghost", "remove"])
    err = capsys.readouterr().err
    assert rc == 1, f"remove of unknown cluster should exit 1, got {rc}"
    assert "ghost" in err, f"error should name the cluster: {err}"


def test_status_not_deployed_exits_1(tmp_path, capsys):
    rc = main(["--shared-dir", str(tmp_path), "--cluster-id", "ghost", "status"])
    out = capsys.readouterr().out
    assert rc == 1
    doc = last_json(out)
    assert doc["deployed"] is False and doc["cluster_id"] == "ghost"


def test_status_missing_cluster_id_exits_2(capsys):
    rc = main(["status"])
    assert rc == 2, f"status without --cluster-id should exit 2, got {rc}"
    capsys.readouterr()


def test_hold_then_remove_from_another_process(tmp_path):
    """``deploy --hold`` serves until a later ``remove`` signals the holder."""
    plan = write_plan(tmp_path, "holder")
    shared = tmp_path / "shared"
    holder = subprocess.Popen(
        [sys.executable, "-m", "ramstore.cli", "deploy", str(plan), "--hold"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        descriptor = shared / "holder.cluster.json"
        deadline = 30.0
        while deadline > 0 and not descriptor.exists():
            import time as _time
            _time.sleep(0.1)
            deadline -= 0.1
        assert descriptor.exists(), "holder never published the cluster descriptor"

        rc = main(["--shared-dir", str(shared), "--cluster-id", "holder", "remove"])
        assert rc == 0, f"cross-process remove exited {rc}"
        out, err = holder.communicate(timeout=30)
        assert holder.returncode == 0, f"holder exited {holder.returncode}: {err}"
        assert not descriptor.exists(), "descriptor survived removal"
        assert list(shared.iterdir()) == [], "shared dir not empty after removal"
    finally:
        if holder.poll() is None:
            holder.kill()
            holder.communicate()


# ------------------------------------------------------------ objects

@pytest.fixture
def deployed(tmp_path):
    """A real deployment owned by this process; CLI talks to it via the shared dir."""
    plan_path = write_plan(tmp_path, "cliobj")
    plan = DeploymentPlan.from_doc(json.loads(plan_path.read_text()))
    orchestrator.deploy(plan)
    yield tmp_path / "shared"
    orchestrator.remove("cliobj")


def test_object_commands_roundtrip(deployed, tmp_path, capsys):
    shared = str(deployed)
    rng = random.Random("cli-roundtrip")
    payload = rng.randbytes(3 * MIB + 17)
    src = tmp_path / "payload.bin"
    src.write_bytes(payload)
    base = ["--shared-dir", shared, "--cluster-id", "cliobj"]

    rc = main(base + ["put", "data", "blob", str(src)])
    put_doc = last_json(capsys.readouterr().out)
    assert rc == 0, "put failed"
    assert put_doc["bytes"] == len(payload), f"put reported {put_doc['bytes']} bytes"

    dest = tmp_path / "fetched.bin"
    rc = main(base + ["get", "data", "blob", "-o", str(dest)])
    capsys.readouterr()
    assert rc == 0, "get failed"
    assert dest.read_bytes() == payload, "fetched bytes differ from stored bytes"

    rc = main(base + ["ls", "data"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out == f"blob\t{len(payload)}\n", f"unexpected ls output: {out!r}"

    rc = main(base + ["delete", "data", "blob"])
    capsys.readouterr()
    assert rc == 0, "delete failed"

    rc = main(base + ["get", "data", "blob", "-o", str(dest)])
    err = capsys.readouterr().err
    assert rc == 1, f"get after delete should exit 1, got {rc}"
    assert "blob" in err


def test_ls_empty_pool_prints_nothing(deployed, capsys):
    rc = main(["--shared-dir", str(deployed), "--cluster-id", "cliobj", "ls", "data"])
    out = capsys.readouterr().out
    assert rc == 0 and out == "", f"empty pool should list nothing, got {out!r}"


def test_get_against_missing_cluster_exits_1(tmp_path, capsys):
    rc = main(["--shared-dir", str(tmp_path), "--cluster-id", "nope",
               "get", "data", "blob"])
    assert rc == 1
    capsys.readouterr()


def test_status_from_another_process(deployed):
    """A separate process finds the cluster through the shared directory."""
    proc = subprocess.run(
        [sys.executable, "-m", "ramstore.cli",
         "--shared-dir", str(deployed), "--cluster-id", "cliobj", "status"],
        capture_output=True, text=True, timeout=30,
    )
    assert proc.returncode == 0, f"status failed: {proc.stderr}"
    doc = last_json(proc.stdout)
    assert doc["deployed"] is True
    assert doc["osds_up"] == 2, f"expected 2 OSDs up, saw {doc}"
    assert "data" in doc["pools"]


def test_config_file_supplies_defaults(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"shared_dir": str(tmp_path), "cluster_id": "ghost"}))
    rc = main(["--config", str(config), "status"])
    out = capsys.readouterr().out
    assert rc == 1
    assert last_json(out)["cluster_id"] == "ghost"


def test_malformed_config_exits_2(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text("nonsense{")
    rc = main(["--config", str(config), "status"])
    assert rc == 2, f"bad config should exit 2, got {rc}"
    capsys.readouterr()


# ------------------------------------------------------------ pipeline

def test_pipeline_compare_preset_prints_reductions(tmp_path, capsys):
    rc = main(["pipeline", "--preset", "paper-scaled", "--compare",
               "--workdir", str(tmp_path / "work")])
    out = capsys.readouterr().out
    assert rc == 0, f"compare run exited {rc}"
    assert "I/O overhead reduction: 81.04%" in out, f"missing I/O line in:\n{out}"
    assert "Time reduction: 8.32%" in out, f"missing time line in:\n{out}"
    assert "baseline:" in out and "transient:" in out
    doc = last_json(out)
    assert abs(doc["io_overhead_reduction_percent"] - 81.04) < 0.01
    assert abs(doc["time_reduction_percent"] - 8.32) < 0.01


def test_pipeline_compare_needs_preset(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text("{}")
    rc = main(["pipeline", "--spec", str(spec), "--compare"])
    assert rc == 2, f"--compare without --preset should exit 2, got {rc}"
    capsys.readouterr()


def test_pipeline_spec_file_runs_central_only(tmp_path, capsys):
    central = tmp_path / "central"
    central.mkdir()
    doc = {
        "input_bytes": 200 * KIB,
        "input_backend": {"kind": "central", "path": str(central)},
        "parallelism": 1,
        "stages": [
            {"name": "one", "read_from": None,
             "write_to": {"kind": "central", "path": str(central)},
             "output_bytes": 150 * KIB},
            {"name": "two",
             "read_from": {"kind": "central", "path": str(central)},
             "write_to": {"kind": "central", "path": str(central)},
             "output_bytes": 100 * KIB},
        ],
    }
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(doc))
    rc = main(["pipeline", "--spec", str(spec), "--workdir", str(tmp_path / "work")])
    out = capsys.readouterr().out
    assert rc == 0, f"spec-file run exited {rc}"
    assert "one" in out and "two" in out and "Total" in out
    report = last_json(out)
    assert report["ledger"]["totals"]["central"]["bytes_written"] == 250 * KIB


def test_pipeline_unknown_preset_exits_2(capsys):
    rc = main(["pipeline", "--preset", "nonesuch"])
    assert rc == 2, f"unknown preset should exit 2, got {rc}"
    capsys.readouterr()


def test_pipeline_unreadable_spec_exits_2(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text("][")
    rc = main(["pipeline", "--spec", str(spec)])
    assert rc == 2
    capsys.readouterr()


# ------------------------------------------------------------ bench

def test_bench_single_repeat_exits_2(tmp_path, capsys):
    rc = main(["bench", "--backends", "ram", "--blocks", "4K",
               "--total", "64K", "--repeats", "1"])
    err = capsys.readouterr().err
    assert rc == 2, f"one repeat should exit 2, got {rc}"
    assert "repeat" in err.lower() or "sample" in err.lower()


def test_bench_bad_block_size_exits_2(capsys):
    rc = main(["bench", "--blocks", "4Q", "--total", "64K"])
    assert rc == 2
    capsys.readouterr()


def test_bench_two_backends_table_and_doc(tmp_path, capsys):
    rc = main(["bench", "--backends", "ram,central", "--blocks", "4K,40K",
               "--total", "256K", "--repeats", "2",
               "--central-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0, f"bench exited {rc}"
    table = out.splitlines()
    assert "ram" in table[0] and "central" in table[0], f"bad header: {table[0]}"
    data_rows = [ln for ln in table if ln.startswith(("4K", "40K"))]
    assert len(data_rows) == 2, f"expected 2 data rows, got {data_rows}"
    doc = last_json(out)
    assert set(doc["columns"]) == {"ram", "central"}
    for rows in doc["columns"].values():
        assert len(rows) == 2
        for row in rows:
            assert len(row["samples"]) == 2, f"row missing samples: {row}"


def test_bench_empty_backends_exits_2(capsys):
    rc = main(["bench", "--backends", ",", "--blocks", "4K", "--total", "64K"])
    assert rc == 2
    capsys.readouterr()
