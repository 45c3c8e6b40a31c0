"""Simulated-time execution on the logical clock."""
from __future__ import annotations

from typing import Optional

from ..balancer import render_table
from ..descriptors import DeploymentPlan
from ..loadgen import spawn_offsets_ms, user_process
from ..metrics import ScrapeTarget, encode_exposition
from ..sinkpool import pod_samples
from .clock import LogicalClock
from .config import ScenarioConfig, build_plan
from .experiment import Experiment, ExperimentResult
from .rng import SplitMix64


class SimEnv:
    """What a simulated user sees: the virtual service plus a latency model."""

    def __init__(self, exp: Experiment, clock: LogicalClock, rng: SplitMix64, latency):
        self.exp = exp
        self.clock = clock
        self.rng = rng
        self.latency = latency

    def now(self) -> int:
        return self.clock.now

    def upload(self, user_id: int, stream_id: str) -> tuple:
        outcome, pod_id = self.exp.upload(stream_id)
        lat = self.latency.base_ms
        if pod_id is not None:
            lat += self.latency.per_stream_ms * self.exp.deployment.pod(pod_id).active_streams
        if self.latency.jitter_ms:
            lat += self.rng.below(self.latency.jitter_ms + 1)
        return outcome, lat

    def release(self, stream_id: str) -> None:
        self.exp.release(stream_id)

    def record(self, rec) -> None:
        self.exp.record(rec)


class Simulation:
    def __init__(self, config: ScenarioConfig, plan: Optional[DeploymentPlan] = None):
        self.config = config
        self.plan = plan or build_plan(config)
        self.clock = LogicalClock()
        self.rng = SplitMix64(config.seed)
        self.exp = Experiment(config, self.plan, lambda: self.clock.now, self.clock.schedule)
        self.env = SimEnv(self.exp, self.clock, self.rng, config.latency)
        spec = self.exp.spec
        self.sync_ms = spec.sync_period_ms if spec else 15_000
        start = config.load_start
        self.load_start = self.sync_ms if start is None else round(start * 1000)
        self.load_end = self.load_start + round(config.profile.run_duration * 1000)
        self.deadline = self.load_end + round(config.settle_timeout * 1000)
        self.exp.load_start, self.exp.load_end = self.load_start, self.load_end
        self.snapshots: list = []  # (t, table text, status) per tick when requested
        self.keep_snapshots = False
        self._started = False

    def _targets(self) -> list:
        now = self.clock.now
        return [ScrapeTarget(p.id, lambda p=p: encode_exposition(pod_samples(p, now)))
                for p in self.exp.deployment.running_pods()]

    def _tick(self) -> None:
        self.exp.tick(self._targets())
        now = self.clock.now
        if self.keep_snapshots:
            self.snapshots.append((now, render_table(self.exp.vs), self.exp.status.current_average,
                                   len(self.exp.deployment.live_pods())))
        if now >= self.load_end and self.exp.settled() and not self.exp.routes:
            self.clock.stop()
            return
        if now >= self.deadline:
            self.exp.violate("settle timeout", f"pool not back at the floor by t={now}")
            self.clock.stop()
            return
        self.clock.schedule(self.sync_ms, self._tick)

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self.exp.start()
        self.clock.at(0, self._tick)
        self.clock.at(self.load_start, lambda: self.exp.row("load:start"))
        self.clock.at(self.load_end, lambda: self.exp.row("load:stop"))
        profile = self.config.profile
        for user_id, offset in enumerate(spawn_offsets_ms(profile)):
            t = self.load_start + offset
            if t >= self.load_end:
                break
            self.clock.process(user_process(user_id, profile, self.env, self.load_end), start=t)

    def run_until(self, t_ms: int) -> None:
        self.start()
        self.clock.run(until=t_ms)

    def run(self) -> ExperimentResult:
        self.start()
        self.clock.run()
        result = self.exp.finish()
        result.table = render_table(self.exp.vs)
        return result


def run_simulation(config: ScenarioConfig, plan: Optional[DeploymentPlan] = None) -> ExperimentResult:
    return Simulation(config, plan).run()

