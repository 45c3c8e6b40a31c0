"""Emulated client population: ramp-up schedule, user loops and per-second stats."""
from __future__ import annotations

import csv
import enum
import logging
import math
import threading
import time
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Union

from .errors import ContractViolation
from .metrics import format_value

log = logging.getLogger(__name__)

LOADSTATS_HEADER = ["t", "active_users", "rps", "denials", "p50_ms", "p95_ms", "max_ms"]


class Outcome(enum.Enum):
    ADMITTED = "admitted"
    DENIED = "denied"
    CONNECTION_ERROR = "connection_error"


@dataclass
class LoadProfile:
    target_users: int = 100
    hatch_rate: float = 10.0
    stream_hold: Union[float, tuple] = 30.0  # seconds, or (low, high) for uniform
    think_time: float = 1.0
    run_duration: float = 120.0

    def __post_init__(self):
        if isinstance(self.stream_hold, list):
            self.stream_hold = tuple(self.stream_hold)
        if self.target_users < 1:
            raise ContractViolation("target_users must be at least 1")
        if not self.hatch_rate > 0:
            raise ContractViolation("hatch_rate must be positive")
        lo, hi = self.hold_range
        if not 0 < lo <= hi:
            raise ContractViolation("stream_hold must be positive")
        if self.think_time < 0 or self.run_duration < 0:
            raise ContractViolation("think_time and run_duration must be non-negative")

    @property
    def hold_range(self) -> tuple:
        if isinstance(self.stream_hold, tuple):
            lo, hi = self.stream_hold
            return float(lo), float(hi)
        return float(self.stream_hold), float(self.stream_hold)


def _exact(x) -> Fraction:
    # floats go through their shortest repr so 0.1 means one tenth
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def spawn_schedule(profile: LoadProfile, t: float) -> int:
    """Users alive ``t`` seconds after the ramp starts."""
    if t < 0:
        raise ContractViolation("t must be non-negative")
    return min(profile.target_users, math.floor(_exact(profile.hatch_rate) * _exact(t)))


def spawn_offsets_ms(profile: LoadProfile) -> list:
    """Offset of each user's start, the first instant the schedule counts it."""
    rate = _exact(profile.hatch_rate)
    return [math.ceil(Fraction(i + 1) * 1000 / rate) for i in range(profile.target_users)]


@dataclass
class RequestRecord:
    user_id: int
    stream_id: str
    sent_at: int  # ms since experiment epoch
    outcome: Outcome
    latency: float  # ms


@dataclass
class StatsRow:
    t: int
    active_users: int
    rps: int
    admitted: int
    denials: int
    errors: int
    p50_ms: Optional[float]
    p95_ms: Optional[float]
    max_ms: Optional[float]


@dataclass
class LoadStats:
    rows: list = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOADSTATS_HEADER)
            for r in self.rows:
                w.writerow([r.t, r.active_users, r.rps, r.denials,
                            *("" if v is None else format_value(v) for v in (r.p50_ms, r.p95_ms, r.max_ms))])


def nearest_rank(sorted_values: list, pct: float):
    if not sorted_values:
        return None
    rank = max(1, math.ceil(_exact(pct) / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


def aggregate(records: Iterable[RequestRecord],
              users_at: Optional[Callable[[int], int]] = None) -> LoadStats:
    """Bucket records by whole second of ``sent_at``.

    ``users_at(second)`` supplies the active-user column; without it the
    column counts distinct users seen in the bucket.
    """
    buckets = defaultdict(list)
    for r in records:
        buckets[r.sent_at // 1000].append(r)
    if not buckets:
        return LoadStats()
    rows = []
    for sec in range(min(buckets), max(buckets) + 1):
        recs = buckets.get(sec, [])
        lat = sorted(r.latency for r in recs)
        users = users_at(sec) if users_at else len({r.user_id for r in recs})
        rows.append(StatsRow(
            t=sec, active_users=users, rps=len(recs),
            admitted=sum(r.outcome is Outcome.ADMITTED for r in recs),
            denials=sum(r.outcome is Outcome.DENIED for r in recs),
            errors=sum(r.outcome is Outcome.CONNECTION_ERROR for r in recs),
            p50_ms=nearest_rank(lat, 50), p95_ms=nearest_rank(lat, 95),
            max_ms=lat[-1] if lat else None))
    return LoadStats(rows)


def sample_hold_ms(profile: LoadProfile, rng) -> int:
    lo, hi = profile.hold_range
    lo_ms, hi_ms = round(lo * 1000), round(hi * 1000)
    return lo_ms if lo_ms == hi_ms else lo_ms + rng.below(hi_ms - lo_ms + 1)


def user_process(user_id: int, profile: LoadProfile, env, stop_at: int):
    """Simulated user loop, a generator yielding millisecond delays.

    ``env`` provides ``now()``, ``upload(user_id, stream_id) -> (Outcome,
    latency_ms)``, ``release(stream_id)``, ``record(RequestRecord)`` and
    ``rng``. Denied or failed uploads are retried after the think time.
    """
    think_ms = round(profile.think_time * 1000)
    k = 0
    while env.now() < stop_at:
        stream_id = f"u{user_id}-s{k}"
        k += 1
        sent = env.now()
        outcome, latency = env.upload(user_id, stream_id)
        if latency:
            yield latency
        env.record(RequestRecord(user_id, stream_id, sent, outcome, latency))
        if outcome is Outcome.ADMITTED:
            end = min(env.now() + sample_hold_ms(profile, env.rng), stop_at)
            if end > env.now():
                yield end - env.now()
            env.release(stream_id)
        if env.now() >= stop_at:
            break
        yield think_ms


# -- real-time client --------------------------------------------------------

def _http(method: str, url: str, timeout: float = 5.0):
    req = urllib.request.Request(url, method=method, data=b"" if method == "POST" else None)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read().decode()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read().decode()


def run_user(user_id: int, controller_addr: str, profile: LoadProfile, stop: threading.Event,
             emit: Callable[[RequestRecord], None], clock: Callable[[], int], rng) -> None:
    """Real-time user loop against the controller and virtual service over HTTP."""
    think = profile.think_time
    k = 0
    while not stop.is_set():
        stream_id = f"u{user_id}-s{k}"
        k += 1
        sent = clock()
        t0 = time.monotonic()
        try:
            status, endpoint = _http("GET", f"http://{controller_addr}/endpoint")
            if status != 200:
                raise ConnectionError(f"controller answered {status}")
            status, body = _http("POST", f"http://{endpoint.strip()}/upload?stream={stream_id}")
            if status == 200:
                outcome = Outcome.ADMITTED
            elif status == 503 and body.startswith("denied"):
                outcome = Outcome.DENIED
            else:
                outcome = Outcome.CONNECTION_ERROR
        except (OSError, ConnectionError) as exc:
            log.debug("user %s request failed: %s", user_id, exc)
            outcome = Outcome.CONNECTION_ERROR
        emit(RequestRecord(user_id, stream_id, sent, outcome, (time.monotonic() - t0) * 1000))
        if outcome is Outcome.ADMITTED:
            stop.wait(sample_hold_ms(profile, rng) / 1000)
            try:
                _http("DELETE", f"http://{endpoint.strip()}/upload/{stream_id}")
            except OSError as exc:
                log.warning("release of %s failed: %s", stream_id, exc)
        if stop.wait(think):
            break
