from __future__ import annotations

import pytest
import requests

from ramstore import errors
from ramstore.gateway import STATUS_BY_ERROR, Gateway, GatewaySpec, serve, status_for
from ramstore.util import deterministic_bytes

KIB = 1024


@pytest.fixture
def gateway(cluster):
    gw = serve(
        GatewaySpec(
            listen_address="127.0.0.1:0",
            monitor_address=cluster.monitor_address,
            client_secret=cluster.keyring.secret("client"),
            max_body_bytes=4 * 1024 * 1024,
        )
    )
    yield gw, cluster
    gw.stop()


def auth(cluster) -> dict:
    return {"Authorization": f"Bearer {cluster.keyring.secret('client')}"}


def test_put_get_delete_cycle(gateway):
    gw, cluster = gateway
    url = f"{gw.url}/data/greeting"
    headers = auth(cluster)

    r = requests.put(url, data=b"abc", headers=headers)
    assert r.status_code == 201
    r = requests.get(url, headers=headers)
    assert r.status_code == 200
    assert r.content == b"abc"
    r = requests.delete(url, headers=headers)
    assert r.status_code == 204
    r = requests.get(url, headers=headers)
    assert r.status_code == 404


def test_http_roundtrip_matches_direct_client(gateway):
    gw, cluster = gateway
    headers = auth(cluster)
    payload = deterministic_bytes("http-vs-native", 700 * KIB)

    r = requests.put(f"{gw.url}/data/via-http", data=payload, headers=headers)
    assert r.status_code == 201
    direct, _ = cluster.store_client().get_object("data", "via-http")
    assert direct == payload

    cluster.store_client().put_object("data", "via-native", payload)
    r = requests.get(f"{gw.url}/data/via-native", headers=headers)
    assert r.content == payload


def test_listing_format(gateway):
    gw, cluster = gateway
    headers = auth(cluster)
    for name, size in (("b-item", 10), ("a-item", 3)):
        requests.put(f"{gw.url}/data/{name}", data=b"x" * size, headers=headers)
    r = requests.get(f"{gw.url}/data?list", headers=headers)
    assert r.status_code == 200
    assert r.text == "a-item\t3\nb-item\t10\n"


def test_auth_required_everywhere(gateway):
    gw, cluster = gateway
    bad_headers = [{}, {"Authorization": "Bearer " + "0" * 64}, {"Authorization": "nope"}]
    probes = [
        ("GET", f"{gw.url}/data/x"),
        ("PUT", f"{gw.url}/data/x"),
        ("DELETE", f"{gw.url}/data/x"),
        ("GET", f"{gw.url}/data?list"),
    ]
    for method, url in probes:
        for headers in bad_headers:
            r = requests.request(method, url, data=b"x", headers=headers)
            assert r.status_code == 403, f"{method} {url} with {headers}: {r.status_code}"


def test_missing_pool_is_404(gateway):
    gw, cluster = gateway
    r = requests.get(f"{gw.url}/ghost/x", headers=auth(cluster))
    assert r.status_code == 404
    r = requests.get(f"{gw.url}/ghost?list", headers=auth(cluster))
    assert r.status_code == 404


def test_put_requires_content_length(gateway):
    gw, cluster = gateway
    headers = dict(auth(cluster))
    headers["Transfer-Encoding"] = "chunked"
    r = requests.put(f"{gw.url}/data/chunked", data=iter([b"ab", b"cd"]), headers=headers)
    assert r.status_code == 411


def test_oversized_body_is_413(gateway):
    gw, cluster = gateway
    r = requests.put(
        f"{gw.url}/data/huge",
        data=b"z" * (4 * 1024 * 1024 + 1),
        headers=auth(cluster),
    )
    assert r.status_code == 413


def test_cluster_too_full_is_507_with_no_partial_object(make_cluster):
    cluster = make_cluster(n_osds=1, capacity_bytes=1024 * KIB)
    gw = serve(
        GatewaySpec("127.0.0.1:0", cluster.monitor_address, cluster.keyring.secret("client"))
    )
    try:
        r = requests.put(
            f"{gw.url}/data/too-big", data=b"x" * (2048 * KIB), headers=auth(cluster)
        )
        assert r.status_code == 507
        r = requests.get(f"{gw.url}/data/too-big", headers=auth(cluster))
        assert r.status_code == 404, "partially written object is visible"
        r = requests.get(f"{gw.url}/data?list", headers=auth(cluster))
        assert r.text == ""
    finally:
        gw.stop()


def test_occupied_port_raises(gateway):
    gw, cluster = gateway
    with pytest.raises(errors.AddressInUse):
        Gateway(
            GatewaySpec(gw.address, cluster.monitor_address, cluster.keyring.secret("client"))
        )


def test_status_mapping_is_total():
    # Every wire-registered error type must resolve to exactly one status.
    for name, cls in errors.WIRE_REGISTRY.items():
        if cls in (errors.PhaseTimeout, errors.AgentFailure):
            err = errors.from_wire(name, "probe")
        else:
            err = cls("probe")
        status = status_for(err)
        assert status in (400, 403, 404, 500, 502, 503, 507), f"{name} -> {status}"
    # and the documented anchors hold
    assert STATUS_BY_ERROR[errors.NoSuchObject] == 404
    assert STATUS_BY_ERROR[errors.UnknownPool] == 404
    assert STATUS_BY_ERROR[errors.NoSpace] == 507
    assert STATUS_BY_ERROR[errors.AuthFailure] == 403
