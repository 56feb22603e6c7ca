"""Deploy/remove lifecycle, parallel launch, and teardown hygiene."""

from __future__ import annotations

import random
import time
from pathlib import Path

import pytest

from ramstore.control_plane import Keyring, MonitorClient, PoolSpec
from ramstore.errors import (
    AgentFailure,
    MonitorUnavailable,
    NotEnoughOsds,
    PhaseTimeout,
    UnknownCluster,
)
from ramstore.orchestrator import (
    DeploymentPlan,
    deploy,
    kill_agent,
    launch_parallel,
    remove,
    status,
)
from ramstore.store import StoreClient

MIB = 1 << 20


def make_plan(shared: Path, cluster_id: str, n_hosts: int = 1, **overrides) -> DeploymentPlan:
    fields = dict(
        cluster_id=cluster_id,
        hosts=[f"host{i}" for i in range(n_hosts)],
        device_capacity_bytes=16 * MIB,
        shared_dir=str(shared),
        pool=PoolSpec("data", 1, MIB),
    )
    fields.update(overrides)
    return DeploymentPlan(**fields)


def store_client_for(shared: Path, cluster_id: str) -> StoreClient:
    ring = Keyring.read_dir(shared, cluster_id)
    monitor_address = status(cluster_id)["monitor_address"]
    secret = ring.secret("client")
    return StoreClient(MonitorClient(monitor_address, secret), secret)


def orphan_launchers() -> int:
    count = 0
    for entry in Path("/proc").iterdir():
        if not entry.name.isdigit():
            continue
        try:
            cmdline = (entry / "cmdline").read_bytes()
        except OSError:
            continue
        if b"orchestrator.launcher" in cmdline:
            count += 1
    return count


# ---------------------------------------------------------------- launch


def test_launch_parallel_is_actually_parallel(tmp_path):
    def nap(host):
        time.sleep(1.0)
        return {"napped": host}

    hosts = [f"h{i}" for i in range(8)]
    started = time.monotonic()
    outcomes = launch_parallel(hosts, nap, timeout=10, log_dir=tmp_path)
    wall = time.monotonic() - started
    assert wall < 2.0, f"8 one-second naps took {wall:.2f}s; launch is sequential"
    assert all(outcomes[h]["ok"] for h in hosts), f"unexpected failures: {outcomes}"
    assert outcomes["h3"]["napped"] == "h3"


def test_launch_parallel_no_hosts():
    assert launch_parallel([], lambda host: None) == {}


def test_launch_parallel_one_failure_is_attributed(tmp_path):
    def act(host):
        if host == "h5":
            raise RuntimeError("disk on fire")
        return {}

    hosts = [f"h{i}" for i in range(8)]
    outcomes = launch_parallel(hosts, act, timeout=10, log_dir=tmp_path)
    good = [h for h in hosts if outcomes[h]["ok"]]
    assert len(good) == 7, f"expected 7 survivors, got {len(good)}"
    assert not outcomes["h5"]["ok"]
    assert "disk on fire" in outcomes["h5"]["error"]


def test_launch_parallel_hung_host_times_out(tmp_path):
    def act(host):
        if host == "h1":
            time.sleep(30)
        return {}

    outcomes = launch_parallel(["h0", "h1"], act, timeout=1.0, log_dir=tmp_path)
    assert outcomes["h0"]["ok"]
    assert outcomes["h1"].get("timeout"), f"h1 outcome: {outcomes['h1']}"


# ----------------------------------------------------------- deploy/remove


def test_deploy_single_host_serves_puts(tmp_path):
    plan = make_plan(tmp_path, "uno")
    report = deploy(plan)
    try:
        assert [name for name, _ in report.phases] == [
            "bootstrap_monitor", "write_keyring", "start_manager",
            "launch_agents", "create_pool",
        ], f"phase order wrong: {report.phases}"
        assert report.total_seconds >= max(s for _, s in report.phases)
        assert report.per_host == {"host0": "ok"}

        client = store_client_for(tmp_path, "uno")
        rng = random.Random(41)
        payload = rng.randbytes(3 * MIB)
        client.put_object("data", "first", payload)
        data, _ = client.get_object("data", "first")
        assert data == payload, "freshly deployed cluster dropped a put"
    finally:
        remove("uno")


def test_deploy_four_hosts_map_and_keyring(tmp_path):
    plan = make_plan(tmp_path, "quad", n_hosts=4)
    deploy(plan)
    try:
        info = status("quad")
        assert info["deployed"] and info["osds_up"] == 4, info
        assert info["osds_down"] == 0
        assert info["pools"] == ["data"]
        for role in ("monitor", "manager", "osd", "client", "gateway"):
            key = tmp_path / f"quad.{role}.key"
            assert key.exists(), f"missing key file {key.name}"
            assert len(key.read_text().strip()) == 64
        assert (tmp_path / "quad.cluster.json").exists()
    finally:
        remove("quad")


def test_replication_three_on_two_hosts_aborts_cleanly(tmp_path):
    plan = make_plan(tmp_path, "thin", n_hosts=2, pool=PoolSpec("data", 3, MIB))
    with pytest.raises(NotEnoughOsds):
        deploy(plan)
    # auto-removal must leave no residue behind the failed attempt
    assert list(tmp_path.iterdir()) == [], f"residue: {list(tmp_path.iterdir())}"
    assert status("thin") == {"cluster_id": "thin", "deployed": False}
    redo = make_plan(tmp_path, "thin", n_hosts=2)
    deploy(redo)
    remove("thin")


def test_remove_scrubs_everything(tmp_path):
    plan = make_plan(tmp_path, "gone", n_hosts=2)
    deploy(plan)
    client = store_client_for(tmp_path, "gone")
    client.put_object("data", "doomed", b"z" * 100_000)
    monitor_address = status("gone")["monitor_address"]

    report = remove("gone")
    assert [name for name, _ in report.phases] == [
        "stop_osds", "unregister_osds", "destroy_devices", "cleanup_shared",
    ]
    assert all(v == "ok" for v in report.per_host.values()), report.per_host
    assert list(tmp_path.iterdir()) == [], "shared dir not scrubbed"
    assert orphan_launchers() == 0, "launcher process leaked"
    with pytest.raises(MonitorUnavailable):
        MonitorClient(monitor_address, "0" * 64, timeout=1).get_map()
    with pytest.raises(UnknownCluster):
        remove("gone")


def test_redeploy_same_cluster_id(tmp_path):
    for round_no in range(2):
        plan = make_plan(tmp_path, "again")
        deploy(plan)
        client = store_client_for(tmp_path, "again")
        client.put_object("data", f"obj-{round_no}", bytes([round_no]) * 1000)
        remove("again")
    assert list(tmp_path.iterdir()) == []


def test_status_unknown_cluster():
    assert status("never-was") == {"cluster_id": "never-was", "deployed": False}


def test_killed_agent_shows_as_down_osd(tmp_path):
    plan = make_plan(tmp_path, "faulty", n_hosts=3)
    deploy(plan, liveness_window_seconds=0.6)
    try:
        kill_agent("faulty", "host1")
        deadline = time.monotonic() + 5.0
        down = 0
        while time.monotonic() < deadline:
            down = status("faulty")["osds_down"]
            if down == 1:
                break
            time.sleep(0.05)
        assert down == 1, f"killed agent never marked down: {status('faulty')}"
        assert status("faulty")["osds_up"] == 2
    finally:
        remove("faulty")
    assert list(tmp_path.iterdir()) == []


def test_agent_failure_is_attributed_and_aborts(tmp_path):
    plan = make_plan(tmp_path, "halfbad", n_hosts=4)
    # squat on host2's runtime directory so its agent cannot come up
    runtime = tmp_path / "halfbad.runtime"
    runtime.mkdir()
    (runtime / "host2").write_text("roadblock")
    with pytest.raises(AgentFailure) as err:
        deploy(plan)
    assert "host2" in str(err.value), f"failure not attributed: {err.value}"
    assert status("halfbad") == {"cluster_id": "halfbad", "deployed": False}
    assert orphan_launchers() == 0


def test_phase_timeout_names_laggards(tmp_path):
    plan = make_plan(tmp_path, "sluggish", n_hosts=2, phase_timeout_seconds=0.0001)
    with pytest.raises(PhaseTimeout) as err:
        deploy(plan)
    message = str(err.value)
    assert "launch_agents" in message
    assert "host0" in message and "host1" in message
    assert status("sluggish") == {"cluster_id": "sluggish", "deployed": False}
    assert list(tmp_path.iterdir()) == []


def test_deploy_with_gateway(tmp_path):
    requests = pytest.importorskip("requests")
    plan = make_plan(
        tmp_path, "fronted", n_hosts=2, pool=None,
        gateway={"listen_address": "127.0.0.1:0"},
    )
    deploy(plan)
    try:
        info = status("fronted")
        assert info["gateway"]["alive"], info
        url = f"http://{info['gateway']['address']}"
        ring = Keyring.read_dir(tmp_path, "fronted")
        headers = {"Authorization": f"Bearer {ring.secret('client')}"}

        # gateway is up but no pool was requested, so buckets 404
        probe = requests.get(f"{url}/nosuch/obj", headers=headers, timeout=5)
        assert probe.status_code == 404

        secret = ring.secret("client")
        monitor = MonitorClient(info["monitor_address"], secret)
        monitor.create_pool(PoolSpec("web", 1, MIB))
        body = b"through the front door"
        put = requests.put(f"{url}/web/hello", data=body, headers=headers, timeout=5)
        assert put.status_code == 201, put.text
        got = requests.get(f"{url}/web/hello", headers=headers, timeout=5)
        assert got.content == body
        gateway_address = info["gateway"]["address"]
    finally:
        remove("fronted")
    host, port = gateway_address.split(":")
    import socket
    with pytest.raises(OSError):
        socket.create_connection((host, int(port)), timeout=0.5).close()
    assert list(tmp_path.iterdir()) == []
