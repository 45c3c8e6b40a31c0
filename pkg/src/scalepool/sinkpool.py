"""Video sink pod deployment: pod lifecycle, stream admission, per-pod metrics."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ContractViolation, InvariantViolation
from .metrics import ACTIVE_STREAMS, REQUESTS_TOTAL, Registry

# kube-controller-manager's alphabet for generated name fragments
NAME_ALPHABET = "bcdfghjklmnpqrstvwxz2456789"


class PodPhase(enum.Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    DRAINING = "Draining"
    TERMINATED = "Terminated"


LEGAL_TRANSITIONS = {
    (PodPhase.PENDING, PodPhase.RUNNING),
    (PodPhase.RUNNING, PodPhase.DRAINING),
    (PodPhase.DRAINING, PodPhase.TERMINATED),
    (PodPhase.PENDING, PodPhase.TERMINATED),
}

LIVE_PHASES = (PodPhase.PENDING, PodPhase.RUNNING)


class AdmitResult(enum.Enum):
    ADMITTED = "admitted"
    OVERLOADED = "overloaded"
    DRAINING = "draining"
    NOT_READY = "not-ready"

    @property
    def admitted(self) -> bool:
        return self is AdmitResult.ADMITTED


@dataclass
class PodTemplate:
    capacity: int = 20
    startup_delay_ms: int = 2000

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractViolation("pod capacity must be positive")
        if self.startup_delay_ms < 0:
            raise ContractViolation("startup delay must be non-negative")


@dataclass
class PodInstance:
    id: str
    capacity: int
    created_at: int
    phase: PodPhase = PodPhase.PENDING
    active_streams: int = 0
    request_counter: int = 0
    restarts: int = 0
    addr: str = ""
    streams: set = field(default_factory=set)
    registry: Registry = field(default_factory=Registry)

    def __post_init__(self):
        self.registry.inc(REQUESTS_TOTAL, {"pod": self.id}, 0, self.created_at)
        self.registry.set(ACTIVE_STREAMS, {"pod": self.id}, 0, self.created_at)

    @property
    def live(self) -> bool:
        return self.phase in LIVE_PHASES


@dataclass
class LifecycleEvent:
    t: int
    pod: str
    event: str
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "pod": self.pod, "event": self.event,
                           "detail": self.detail}, sort_keys=True)


class PodNamer:
    """Deterministic ``<deployment>-<hash>-<suffix>`` names from a seed."""

    def __init__(self, deployment: str, seed: int):
        self.deployment = deployment
        self.seed = seed
        self.counter = 0
        digest = hashlib.sha256(f"{seed}/{deployment}/template".encode()).digest()
        self.template_hash = "".join(NAME_ALPHABET[b % len(NAME_ALPHABET)] for b in digest[:10])
        self.issued: set = set()

    def next(self) -> str:
        while True:
            digest = hashlib.sha256(f"{self.seed}/{self.deployment}/{self.counter}".encode()).digest()
            self.counter += 1
            suffix = "".join(NAME_ALPHABET[b % len(NAME_ALPHABET)] for b in digest[:5])
            name = f"{self.deployment}-{self.template_hash}-{suffix}"
            if name not in self.issued:
                self.issued.add(name)
                return name


def transition(pod: PodInstance, new: PodPhase, now: int, detail: str = "") -> LifecycleEvent:
    if (pod.phase, new) not in LEGAL_TRANSITIONS:
        raise InvariantViolation("phase machine", f"{pod.id}: {pod.phase.value} -> {new.value}")
    if new is PodPhase.TERMINATED and pod.active_streams:
        raise InvariantViolation("no stream loss", f"{pod.id} terminated with "
                                 f"{pod.active_streams} active streams")
    pod.phase = new
    return LifecycleEvent(now, pod.id, new.value, detail)


def admit_stream(pod: PodInstance, stream_id, now: int = 0) -> AdmitResult:
    # a denied upload is still an HTTP request received by the pod
    pod.request_counter += 1
    pod.registry.inc(REQUESTS_TOTAL, {"pod": pod.id}, 1, now)
    if pod.phase is PodPhase.DRAINING:
        return AdmitResult.DRAINING
    if pod.phase is not PodPhase.RUNNING:
        return AdmitResult.NOT_READY
    if pod.active_streams >= pod.capacity:
        return AdmitResult.OVERLOADED
    if stream_id in pod.streams:
        raise ContractViolation(f"stream {stream_id} already open on {pod.id}")
    pod.streams.add(stream_id)
    pod.active_streams += 1
    pod.registry.set(ACTIVE_STREAMS, {"pod": pod.id}, pod.active_streams, now)
    return AdmitResult.ADMITTED


def release_stream(pod: PodInstance, stream_id, now: int = 0) -> Optional[LifecycleEvent]:
    """Close a stream; returns the termination event if the pod finished draining."""
    if stream_id not in pod.streams:
        raise ContractViolation(f"stream {stream_id} is not open on {pod.id}")
    pod.streams.remove(stream_id)
    pod.active_streams -= 1
    pod.registry.set(ACTIVE_STREAMS, {"pod": pod.id}, pod.active_streams, now)
    if pod.phase is PodPhase.DRAINING and pod.active_streams == 0:
        return transition(pod, PodPhase.TERMINATED, now, "drained")
    return None


def pod_samples(pod: PodInstance, now: int = 0) -> list:
    samples = pod.registry.snapshot()
    for s in samples:
        s.timestamp = now
    return samples


@dataclass
class Deployment:
    name: str
    template: PodTemplate = field(default_factory=PodTemplate)
    desired_replicas: int = 0
    pods: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.namer = PodNamer(self.name, self.seed)

    def live_pods(self) -> list:
        return [p for p in self.pods if p.live]

    def running_pods(self) -> list:
        return [p for p in self.pods if p.phase is PodPhase.RUNNING]

    def pod(self, pod_id: str) -> PodInstance:
        for p in self.pods:
            if p.id == pod_id:
                return p
        raise KeyError(pod_id)


def scale_to(deployment: Deployment, n: int, now: int = 0) -> list:
    """Create or drain pods so that ``n`` are live; returns lifecycle events.

    New pods start Pending; the owner marks them Running after the template's
    startup delay. Scale-in drains the pods with the fewest active streams,
    newest first on ties; a drained pod terminates once its last stream ends.
    """
    if n < 0:
        raise ContractViolation("replica count must be non-negative")
    deployment.desired_replicas = n
    live = deployment.live_pods()
    events = []
    if n > len(live):
        for _ in range(n - len(live)):
            pod = PodInstance(deployment.namer.next(), deployment.template.capacity, now)
            deployment.pods.append(pod)
            events.append(LifecycleEvent(now, pod.id, "Created", PodPhase.PENDING.value))
    elif n < len(live):
        order = sorted(range(len(live)),
                       key=lambda i: (live[i].active_streams, -live[i].created_at, -i))
        for i in order[:len(live) - n]:
            pod = live[i]
            if pod.phase is PodPhase.PENDING:
                events.append(transition(pod, PodPhase.TERMINATED, now, "scale-in before ready"))
                continue
            events.append(transition(pod, PodPhase.DRAINING, now, "scale-in"))
            if pod.active_streams == 0:
                events.append(transition(pod, PodPhase.TERMINATED, now, "drained"))
    return events


def mark_running(pod: PodInstance, now: int) -> Optional[LifecycleEvent]:
    """Finish startup; a pod cancelled while Pending stays terminated."""
    if pod.phase is not PodPhase.PENDING:
        return None
    return transition(pod, PodPhase.RUNNING, now, "ready")


class SinkPool:
    """Single owner of a deployment: applies scaling, admission and startup timers.

    ``schedule(delay_ms, fn)`` defers a callback on whatever clock drives the
    pool; listeners receive every lifecycle event in order.
    """

    def __init__(self, deployment: Deployment, schedule: Callable, clock: Callable[[], int],
                 addr_for: Optional[Callable[[PodInstance], str]] = None):
        self.deployment = deployment
        self.schedule = schedule
        self.clock = clock
        self.addr_for = addr_for or (lambda pod: "")
        self.events: list = []
        self.listeners: list = []

    def _emit(self, events):
        for ev in events:
            if ev is None:
                continue
            self.events.append(ev)
            for fn in self.listeners:
                fn(ev)

    def deploy(self, n: int) -> None:
        """Initial rollout: ``n`` pods that are already Running at the epoch."""
        now = self.clock()
        events = scale_to(self.deployment, n, now)
        for pod in self.deployment.pods:
            pod.addr = self.addr_for(pod)
            events.append(mark_running(pod, now))
        self._emit(events)

    def scale_to(self, n: int) -> list:
        now = self.clock()
        events = scale_to(self.deployment, n, now)
        delay = self.deployment.template.startup_delay_ms
        for ev in events:
            if ev.event == "Created":
                pod = self.deployment.pod(ev.pod)
                pod.addr = self.addr_for(pod)
                self.schedule(delay, lambda pod=pod: self._emit([mark_running(pod, self.clock())]))
        self._emit(events)
        return events

    def admit(self, pod_id: str, stream_id) -> AdmitResult:
        return admit_stream(self.deployment.pod(pod_id), stream_id, self.clock())

    def release(self, pod_id: str, stream_id) -> None:
        self._emit([release_stream(self.deployment.pod(pod_id), stream_id, self.clock())])

    def snapshot(self) -> list:
        return [(p.id, p.addr, p.phase) for p in self.deployment.pods]

    def total_active_streams(self) -> int:
        return sum(p.active_streams for p in self.deployment.pods)

    def check(self) -> None:
        for p in self.deployment.pods:
            if p.active_streams > p.capacity:
                raise InvariantViolation("capacity", f"{p.id} has {p.active_streams} > {p.capacity}")
            if p.active_streams != len(p.streams):
                raise InvariantViolation("stream accounting", p.id)
