from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from scalepool.errors import ContractViolation, NoEndpoint
from scalepool.balancer import (
    VirtualService, complete, render_table, schedule, sync_endpoints,
)
from scalepool.sinkpool import PodPhase


def service(scheduler, weights=(1, 1, 1)):
    vs = VirtualService("192.168.39.55:30000", scheduler)
    for i, w in enumerate(weights):
        vs.add_server(f"172.17.0.{10 + i}:8080", w)
    return vs


def counts(vs, n, prefix="c"):
    c = Counter(schedule(vs, f"{prefix}{i}").addr for i in range(n))
    return tuple(c[s.addr] for s in vs.servers)


def snap(n, phase=PodPhase.RUNNING):
    return [(f"vsp-{i}", f"172.17.0.{10 + i}:8080", phase) for i in range(n)]


def test_rr_seven_connections():
    assert counts(service("rr"), 7) == (3, 2, 2)


def test_lc_picks_minimum_with_lowest_index_on_ties():
    vs = service("lc")
    for s, a in zip(vs.servers, (5, 2, 9)):
        s.active_conns = a
    assert schedule(vs, "x") is vs.servers[1]
    vs2 = service("lc")
    assert schedule(vs2, "y") is vs2.servers[0]


def test_wrr_two_to_one():
    vs = service("wrr", (2, 1))
    order = [schedule(vs, i).addr for i in range(6)]
    assert order == [vs.servers[i].addr for i in (0, 0, 1, 0, 0, 1)]
    assert counts(service("wrr", (2, 1)), 6) == (4, 2)


def test_wrr_classic_sequence():
    # weights 4,3,2 with gcd stepping: a a b a b c a b c
    vs = service("wrr", (4, 3, 2))
    seq = "".join("abc"[vs.servers.index(schedule(vs, i))] for i in range(9))
    assert seq == "aababcabc"


def test_no_endpoint():
    with pytest.raises(NoEndpoint):
        schedule(VirtualService("x:1"), "c")
    vs = service("rr", (0,))
    with pytest.raises(NoEndpoint):
        schedule(vs, "c")


def test_duplicate_connection_and_server_rejected():
    vs = service("rr")
    schedule(vs, "a")
    with pytest.raises(ContractViolation):
        schedule(vs, "a")
    with pytest.raises(ContractViolation):
        vs.add_server("172.17.0.10:8080")


def test_sync_endpoints_growth_and_identity():
    vs = VirtualService("v:1")
    sync_endpoints(vs, snap(1))
    events = sync_endpoints(vs, snap(10))
    assert [e[0] for e in events] == ["added"] * 9 and len(vs.servers) == 10
    assert sync_endpoints(vs, snap(10)) == []


def test_pending_pods_get_no_server():
    vs = VirtualService("v:1")
    sync_endpoints(vs, snap(2, PodPhase.PENDING))
    assert vs.servers == []


def test_draining_server_removed_after_last_connection():
    vs = VirtualService("v:1", "rr")
    sync_endpoints(vs, snap(2))
    for c in ("a", "b", "c", "d"):
        schedule(vs, c)
    s0 = vs.servers[0]
    assert s0.active_conns == 2
    pods = snap(2)
    pods[0] = (pods[0][0], pods[0][1], PodPhase.DRAINING)
    assert sync_endpoints(vs, pods) == [("draining", s0.addr)]
    assert all(schedule(vs, f"n{i}") is vs.servers[1] for i in range(3))
    assert complete(vs, "a") is None
    assert complete(vs, "c") == s0.addr
    assert [s.addr for s in vs.servers] == [pods[1][1]]


def test_complete_examples():
    vs = service("rr", (1,))
    schedule(vs, "a")
    complete(vs, "a")
    assert (vs.servers[0].active_conns, vs.servers[0].inactive_conns) == (0, 1)
    with pytest.raises(ContractViolation):
        complete(vs, "a")


def test_rr_cursor_stays_valid_on_removal():
    vs = service("rr", (1, 1, 1, 1))
    for i in range(3):
        schedule(vs, i)
    assert vs.rr_cursor == 3
    sync_endpoints(vs, snap(4)[:1])  # drains 1..3; idle 3 removed at once
    assert 0 <= vs.rr_cursor < len(vs.servers)


def test_render_table():
    vs = service("rr", (1,) * 5)
    vs.servers[0].inactive_conns = 600
    lines = render_table(vs).splitlines()
    assert lines[0] == "TCP 192.168.39.55:30000 rr"
    assert lines[1] == "  -> 172.17.0.10:8080 Masq 1 0 600"
    assert len(lines) == 6
    assert render_table(VirtualService("a:1", "LC")) == "TCP a:1 lc\n"
    assert [l.split()[3] for l in render_table(service("wrr", (2, 1))).splitlines()[1:]] == ["2", "1"]


@given(st.integers(1, 8), st.integers(0, 30))
def test_rr_exactness(k, m):
    assert counts(service("rr", (1,) * k), k * m) == (m,) * k


@given(st.lists(st.integers(1, 6), min_size=1, max_size=6), st.integers(0, 10))
def test_wrr_proportionality(weights, m):
    assert counts(service("wrr", weights), m * sum(weights)) == tuple(m * w for w in weights)


@given(st.integers(1, 8), st.integers(0, 200))
def test_lc_spread_bounded(k, n):
    c = counts(service("lc", (1,) * k), n)
    assert max(c) - min(c) <= 1


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["rr", "wrr", "lc"]),
       st.lists(st.tuples(st.sampled_from(["conn", "done", "churn"]), st.integers(0, 10**6)),
                max_size=80))
def test_draining_servers_receive_nothing_under_churn(scheduler, script):
    vs = VirtualService("v:1", scheduler)
    running = set(range(3))

    def snapshot():
        return [(f"p{i}", f"10.0.0.{i}:80", PodPhase.RUNNING if i in running else PodPhase.DRAINING)
                for i in range(8)]
    sync_endpoints(vs, snapshot())
    cid = 0
    for op, arg in script:
        if op == "conn":
            draining = {s.addr for s in vs.servers if s.draining}
            try:
                rs = schedule(vs, cid)
            except NoEndpoint:
                assert not running
                continue
            assert rs.addr not in draining
            cid += 1
        elif op == "done" and vs.conns:
            complete(vs, sorted(vs.conns)[arg % len(vs.conns)])
        elif op == "churn":
            running ^= {arg % 8}
            sync_endpoints(vs, snapshot())
        assert vs.active_total() == len(vs.conns)
        if vs.servers:
            assert 0 <= vs.rr_cursor < len(vs.servers)
        addrs = [s.addr for s in vs.servers]
        assert len(addrs) == len(set(addrs))
