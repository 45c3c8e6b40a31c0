import csv

import pytest
from hypothesis import given, strategies as st

from scalepool.errors import ContractViolation
from scalepool.harness.clock import LogicalClock
from scalepool.harness.rng import SplitMix64
from scalepool.loadgen import (
    LoadProfile, LoadStats, Outcome, RequestRecord, aggregate, nearest_rank, sample_hold_ms,
    spawn_offsets_ms, spawn_schedule, user_process,
)


def test_spawn_schedule_examples():
    p = LoadProfile(target_users=100, hatch_rate=10)
    assert spawn_schedule(p, 5) == 50
    assert spawn_schedule(p, 10) == 100
    assert spawn_schedule(p, 500) == 100
    assert spawn_schedule(p, 0) == 0
    assert spawn_schedule(LoadProfile(hatch_rate=0.1), 30) == 3


def test_spawn_schedule_rejects_negative_time():
    with pytest.raises(ContractViolation):
        spawn_schedule(LoadProfile(), -1)


@given(st.integers(1, 200), st.floats(0.1, 50), st.lists(st.floats(0, 100), min_size=2, max_size=10))
def test_spawn_schedule_bounded_and_monotone(users, rate, times):
    p = LoadProfile(target_users=users, hatch_rate=rate)
    counts = [spawn_schedule(p, t) for t in sorted(times)]
    assert all(0 <= c <= users for c in counts)
    assert counts == sorted(counts)


@given(st.integers(1, 100), st.sampled_from([0.5, 1, 3, 10, 7.5, 0.3]))
def test_spawn_offsets_match_schedule(users, rate):
    p = LoadProfile(target_users=users, hatch_rate=rate)
    for i, off in enumerate(spawn_offsets_ms(p)):
        assert spawn_schedule(p, off / 1000) >= i + 1
        assert spawn_schedule(p, (off - 1) / 1000) < i + 1


@pytest.mark.parametrize("kw", [{"target_users": 0}, {"hatch_rate": 0}, {"stream_hold": 0},
                                {"stream_hold": (5, 2)}, {"think_time": -1}])
def test_profile_validation(kw):
    with pytest.raises(ContractViolation):
        LoadProfile(**kw)


class FakeEnv:
    def __init__(self, clock, deny_until=0, latency=0):
        self.clock = clock
        self.rng = SplitMix64(1)
        self.deny_until = deny_until
        self.latency = latency
        self.records, self.open, self.completed = [], {}, []

    def now(self):
        return self.clock.now

    def upload(self, user_id, stream_id):
        if self.clock.now < self.deny_until:
            return Outcome.DENIED, self.latency
        self.open[stream_id] = self.clock.now
        return Outcome.ADMITTED, self.latency

    def release(self, stream_id):
        self.completed.append((stream_id, self.clock.now - self.open.pop(stream_id)))

    def record(self, rec):
        self.records.append(rec)


def run(profile, stop_at, **kw):
    clock = LogicalClock()
    env = FakeEnv(clock, **kw)
    clock.process(user_process(0, profile, env, stop_at), start=0)
    clock.run()
    return env


def test_single_user_timeline():
    env = run(LoadProfile(target_users=1, stream_hold=10, think_time=1), 22_000)
    assert [held for _, held in env.completed] == [10_000, 10_000]
    assert not env.open


def test_stop_mid_hold_releases_stream():
    env = run(LoadProfile(stream_hold=30, think_time=1), 5_000)
    assert env.completed == [("u0-s0", 5_000)] and not env.open


def test_denied_uploads_retry_after_think_time():
    env = run(LoadProfile(stream_hold=10, think_time=1), 15_000, deny_until=2_500, latency=100)
    outcomes = [(r.sent_at, r.outcome) for r in env.records]
    assert outcomes[:3] == [(0, Outcome.DENIED), (1_100, Outcome.DENIED), (2_200, Outcome.DENIED)]
    assert outcomes[3] == (3_300, Outcome.ADMITTED)
    assert all(r.latency == 100 for r in env.records)


def test_uniform_hold_stays_in_range():
    p = LoadProfile(stream_hold=(1, 2))
    rng = SplitMix64(9)
    holds = [sample_hold_ms(p, rng) for _ in range(500)]
    assert 1000 <= min(holds) and max(holds) <= 2000 and len(set(holds)) > 100


def rec(sent_at, outcome=Outcome.ADMITTED, latency=1.0, user=0):
    return RequestRecord(user, "s", sent_at, outcome, latency)


def test_aggregate_examples():
    assert aggregate([]).rows == []
    (row,) = aggregate([rec(100 * i, latency=i + 1) for i in range(10)]).rows
    assert (row.p50_ms, row.p95_ms, row.max_ms, row.rps) == (5, 10, 10, 10)
    mixed = [rec(0)] * 3 + [rec(500, Outcome.DENIED)] * 2
    (row,) = aggregate(mixed).rows
    assert (row.rps, row.denials, row.admitted) == (5, 2, 3)


def test_aggregate_fills_gaps_and_uses_user_curve():
    rows = aggregate([rec(0), rec(2500, Outcome.CONNECTION_ERROR)], users_at=lambda s: 10 * s).rows
    assert [(r.t, r.rps, r.active_users, r.errors) for r in rows] == [(0, 1, 0, 0), (1, 0, 10, 0), (2, 1, 20, 1)]
    assert rows[1].p50_ms is None


@given(st.lists(st.tuples(st.integers(0, 10_000), st.sampled_from(list(Outcome))), max_size=100))
def test_aggregate_outcomes_sum_to_requests(items):
    rows = aggregate([rec(t, o) for t, o in items]).rows
    assert all(r.admitted + r.denials + r.errors == r.rps for r in rows)
    assert sum(r.rps for r in rows) == len(items)


def test_nearest_rank():
    assert nearest_rank([], 50) is None
    assert nearest_rank([7], 95) == 7
    assert nearest_rank(list(range(1, 21)), 95) == 19


def test_write_csv(tmp_path):
    stats = aggregate([rec(0, latency=2.5), rec(10, latency=4)])
    path = tmp_path / "loadstats.csv"
    stats.write_csv(str(path))
    rows = list(csv.reader(path.open()))
    assert rows == [["t", "active_users", "rps", "denials", "p50_ms", "p95_ms", "max_ms"],
                    ["0", "1", "2", "0", "2.5", "4", "4"]]
    LoadStats().write_csv(str(path))
    assert path.read_text() == "t,active_users,rps,denials,p50_ms,p95_ms,max_ms\n"
