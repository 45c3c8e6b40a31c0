"""State shared by the simulated and real-time runners: wiring, trace, audits, report."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..autoscaler import HpaStatus, reconcile
from ..balancer import VirtualService, complete, schedule, sync_endpoints
from ..descriptors import DeploymentPlan
from ..errors import ContractViolation, NoEndpoint
from ..loadgen import LoadStats, Outcome, RequestRecord, aggregate, spawn_schedule
from ..metrics import CustomMetricsAdapter, scrape
from ..sinkpool import LEGAL_TRANSITIONS, Deployment, PodPhase, PodTemplate, SinkPool
from .config import ScenarioConfig

log = logging.getLogger(__name__)

TRACE_HEADER = ["t", "replicas_running", "replicas_desired", "avg_metric_millis",
                "admitted_total", "denied_total", "rps", "event"]


def sim_pod_addr(index: int) -> str:
    n = 10 + index
    return f"172.17.{n // 256}.{n % 256}:8080"


class Trace:
    """Experiment rows; rows stamped with the same instant are merged into one."""

    def __init__(self):
        self.rows: list = []

    def record(self, t: int, replicas_running: int, replicas_desired: int,
               avg_metric_millis: Optional[int], admitted_total: int, denied_total: int,
               rps: int, event: str) -> None:
        row = {"t": t, "replicas_running": replicas_running, "replicas_desired": replicas_desired,
               "avg_metric_millis": avg_metric_millis, "admitted_total": admitted_total,
               "denied_total": denied_total, "rps": rps}
        if self.rows and self.rows[-1]["t"] == t:
            prev = self.rows[-1]
            events = prev["events"]
            prev.update(row)
            prev["events"] = events
        else:
            if self.rows and t < self.rows[-1]["t"]:
                raise ContractViolation(f"trace time went backwards: {t} < {self.rows[-1]['t']}")
            row["events"] = []
            self.rows.append(row)
        self.rows[-1]["events"].append(event)

    @staticmethod
    def event_text(events: list) -> str:
        counts = {}
        for e in events:
            counts[e] = counts.get(e, 0) + 1
        return "|".join(e if n == 1 else f"{e}*{n}" for e, n in counts.items())

    def tick_rows(self) -> list:
        return [r for r in self.rows if any(e.startswith("tick") for e in r["events"])]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for r in self.rows:
                avg = r["avg_metric_millis"]
                w.writerow([r["t"], r["replicas_running"], r["replicas_desired"],
                            "" if avg is None else avg, r["admitted_total"], r["denied_total"],
                            r["rps"], self.event_text(r["events"])])


@dataclass
class ExperimentResult:
    trace: Trace
    stats: LoadStats
    report: dict
    events: list = field(default_factory=list)
    table: str = ""


class Experiment:
    """One tenant-service instance: pool, virtual service, autoscaler and counters.

    The runner supplies the clock, a deferred-callback scheduler and the
    address factory for new pods; all mutating calls must come from a single
    owner (the event loop, or callers holding ``lock`` in real-time mode).
    """

    def __init__(self, config: ScenarioConfig, plan: DeploymentPlan, clock: Callable[[], int],
                 defer: Callable, addr_for: Optional[Callable] = None):
        self.config = config
        self.plan = plan
        self.clock = clock
        front = plan.deployment(plan.virtual_service.deployment)
        self.deployment = Deployment(front.name, PodTemplate(front.capacity, front.startup_delay_ms),
                                     seed=config.seed or 0)
        self._created = 0
        self._addr_for = addr_for or self._sim_addr
        self.pool = SinkPool(self.deployment, defer, clock, self._addr_for)
        self.vs = VirtualService(plan.virtual_service.listen_addr, plan.virtual_service.scheduler)
        self.spec = plan.hpa
        self.initial_replicas = self.spec.min_replicas if self.spec else front.replicas
        self.status = HpaStatus(current_replicas=self.initial_replicas,
                                desired_replicas=self.initial_replicas)
        window = config.overrides.get("metric_window", 30)
        self.adapter = CustomMetricsAdapter(round(window * 1000))
        self.trace = Trace()
        self.records: list = []
        self.issued = self.admitted = self.denied = self.errors = 0
        self.routes: dict = {}
        self.request_times: deque = deque()
        self.violations: dict = {}
        self.scrape_failures: list = []
        self.pool.listeners.append(self._on_lifecycle)
        self.lock = contextlib.nullcontext()
        self.inflight = 0  # forwarded requests not yet answered (real-time only)
        self.load_start: Optional[int] = None
        self.load_end: Optional[int] = None

    def _sim_addr(self, pod) -> str:
        addr = sim_pod_addr(self._created)
        self._created += 1
        return addr

    # -- bookkeeping ---------------------------------------------------------

    def violate(self, invariant: str, detail: str) -> None:
        if invariant not in self.violations:
            log.error("invariant %s violated: %s", invariant, detail)
            self.violations[invariant] = detail

    def audit(self) -> None:
        if self.inflight:
            return
        conns, streams = self.vs.active_total(), self.pool.total_active_streams()
        if conns != streams:
            self.violate("conservation", f"t={self.clock()}: balancer {conns} != pods {streams}")
        for p in self.deployment.pods:
            if p.active_streams > p.capacity:
                self.violate("capacity", f"{p.id} holds {p.active_streams} > {p.capacity}")

    def running(self) -> int:
        return len(self.deployment.running_pods())

    def rps(self, now: int) -> int:
        while self.request_times and self.request_times[0] <= now - 1000:
            self.request_times.popleft()
        return len(self.request_times)

    def row(self, event: str) -> None:
        now = self.clock()
        running = self.running()
        if self.spec and not self.spec.min_replicas <= running <= self.spec.max_replicas:
            self.violate("replica bounds", f"t={now}: {running} running")
        self.trace.record(now, running, self.deployment.desired_replicas, self.status.current_average,
                          self.admitted, self.denied, self.rps(now), event)

    def _on_lifecycle(self, ev) -> None:
        sync_endpoints(self.vs, self.pool.snapshot())
        self.row(f"pod:{ev.event}")
        self.audit()

    # -- operations -----------------------------------------------------------

    def start(self) -> None:
        self.pool.deploy(self.initial_replicas)

    def route(self, stream_id):
        """Schedule a new connection; ``None`` when no server is selectable."""
        self.issued += 1
        self.request_times.append(self.clock())
        try:
            return schedule(self.vs, stream_id)
        except NoEndpoint:
            self.errors += 1
            return None

    def settle(self, stream_id, pod: str, admitted: bool) -> Outcome:
        if admitted:
            self.admitted += 1
            self.routes[stream_id] = pod
        else:
            self.denied += 1
            complete(self.vs, stream_id)
        return Outcome.ADMITTED if admitted else Outcome.DENIED

    def upload(self, stream_id) -> tuple:
        """Route one upload through the virtual service; returns (Outcome, pod)."""
        rs = self.route(stream_id)
        if rs is None:
            return Outcome.CONNECTION_ERROR, None
        result = self.pool.admit(rs.pod, stream_id)
        outcome = self.settle(stream_id, rs.pod, result.admitted)
        self.audit()
        return outcome, rs.pod

    def release(self, stream_id) -> None:
        pod = self.routes.pop(stream_id, None)
        if pod is None:
            raise ContractViolation(f"stream {stream_id} is not open")
        complete(self.vs, stream_id)
        self.pool.release(pod, stream_id)
        self.audit()

    def record(self, rec: RequestRecord) -> None:
        self.records.append(rec)

    def tick(self, targets) -> None:
        """One autoscaler period: scrape ``targets``, reconcile, apply."""
        if self.spec is None:
            with self.lock:
                self.row("tick:fixed")
            return
        samples = scrape(targets, self.clock(), self.scrape_failures)
        with self.lock:
            now = self.clock()
            running = [p.id for p in self.deployment.running_pods()]
            self.adapter.observe(samples)
            self.adapter.forget_missing(running)
            metric = self.adapter.metric_samples(self.spec.metric_name, samples, now)
            self.status.current_replicas = len(self.deployment.live_pods())
            cmd = reconcile(self.spec, self.status, metric, running, now)
            if cmd is not None:
                self.pool.scale_to(cmd.replicas)
            self.row(f"tick:{self.status.last_event}")

    def settled(self) -> bool:
        floor = self.initial_replicas
        return (self.deployment.desired_replicas == floor and self.running() == floor
                and not any(p.phase in (PodPhase.PENDING, PodPhase.DRAINING)
                            for p in self.deployment.pods))

    def users_at(self, second: int) -> int:
        t = second * 1000
        if self.load_start is None or t < self.load_start or t >= self.load_end:
            return 0
        return spawn_schedule(self.config.profile, (t - self.load_start) / 1000)

    # -- results --------------------------------------------------------------

    def final_audits(self) -> None:
        if self.admitted + self.denied + self.errors != self.issued:
            self.violate("request accounting",
                         f"admitted {self.admitted} + denied {self.denied} + errors {self.errors} "
                         f"!= issued {self.issued}")
        if self.routes or self.pool.total_active_streams():
            self.violate("no stream loss", f"{len(self.routes)} streams still open at run end")
        phases = {}
        for ev in self.pool.events:
            if ev.event == "Created":
                phases[ev.pod] = PodPhase.PENDING
                continue
            new = PodPhase(ev.event)
            old = phases.get(ev.pod)
            if old is not None and (old, new) not in LEGAL_TRANSITIONS:
                self.violate("phase machine", f"{ev.pod}: {old.value} -> {new.value}")
            phases[ev.pod] = new
        rows = self.trace.rows
        for a, b in zip(rows, rows[1:]):
            if b["t"] <= a["t"] or b["admitted_total"] < a["admitted_total"] \
                    or b["denied_total"] < a["denied_total"]:
                self.violate("trace monotonicity", f"rows at t={a['t']} and t={b['t']}")
                break

    def build_report(self, stats: LoadStats) -> dict:
        rows = self.trace.rows
        ticks = self.trace.tick_rows()
        peak = max((r["replicas_running"] for r in rows), default=0)
        t_peak = next((r["t"] for r in rows if r["replicas_running"] == peak), None)
        onset = next((r["t"] for r in ticks if r["denied_total"] == self.denied), None)
        settle = None
        if self.load_end is not None and rows and self.settled():
            # first row of the final run at the replica floor
            i = len(rows)
            while i > 0 and rows[i - 1]["replicas_running"] == self.initial_replicas:
                i -= 1
            settle = max(rows[min(i, len(rows) - 1)]["t"], self.load_end)
        start = self.load_start or 0
        return {
            "max_replicas_reached": peak,
            "time_to_max_s": None if t_peak is None else (t_peak - start) / 1000,
            "total_requests": self.issued,
            "total_admitted": self.admitted,
            "total_denials": self.denied,
            "connection_errors": self.errors,
            "denial_free_onset_s": None if onset is None else onset / 1000,
            "load_start_s": start / 1000,
            "load_end_s": None if self.load_end is None else self.load_end / 1000,
            "settle_time_s": None if settle is None else (settle - self.load_end) / 1000,
            "settled": settle is not None,
            "scheduler": self.vs.scheduler,
            "scrape_failures": len(self.scrape_failures),
            "stats_seconds": len(stats.rows),
            "audits": "pass" if not self.violations else dict(self.violations),
            "config": self.config.echo(),
        }

    def finish(self) -> ExperimentResult:
        self.final_audits()
        stats = aggregate(self.records, self.users_at)
        report = self.build_report(stats)
        return ExperimentResult(self.trace, stats, report, list(self.pool.events))


def write_outputs(result: ExperimentResult, output_dir: str) -> dict:
    """Write trace.csv, loadstats.csv, report.json and events.jsonl; returns paths."""
    os.makedirs(output_dir, exist_ok=True)
    paths = {name: os.path.join(output_dir, name)
             for name in ("trace.csv", "loadstats.csv", "report.json", "events.jsonl")}
    result.trace.write_csv(paths["trace.csv"])
    result.stats.write_csv(paths["loadstats.csv"])
    with open(paths["report.json"], "w") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["events.jsonl"], "w") as fh:
        for ev in result.events:
            fh.write(ev.to_json() + "\n")
    return paths

