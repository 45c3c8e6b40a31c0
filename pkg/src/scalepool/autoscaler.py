"""Horizontal autoscaler reconcile loop on a per-pod custom metric.

All replica arithmetic is done on integer milli-units so the decision is
exact: the desired count is ``ceil(current * avg / target)`` unless the
ratio ``avg / target`` is within ``tolerance`` of 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .errors import ContractViolation
from .metrics import REQUEST_RATE, MilliValue, render_milli, to_millis


@dataclass
class HpaSpec:
    target_deployment: str
    target_average: int = 1000
    min_replicas: int = 1
    max_replicas: int = 10
    metric_name: str = REQUEST_RATE
    tolerance: int = 100  # millis of ratio, 100 == 0.1
    sync_period_ms: int = 15_000
    scale_down_stabilization_ms: int = 300_000

    def __post_init__(self):
        if self.target_average <= 0:
            raise ContractViolation("target_average must be positive")
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise ContractViolation(
                f"need 1 <= min_replicas ({self.min_replicas}) <= max_replicas ({self.max_replicas})")
        if self.tolerance < 0:
            raise ContractViolation("tolerance must be non-negative")
        if self.sync_period_ms <= 0:
            raise ContractViolation("sync period must be positive")


@dataclass
class HpaStatus:
    current_replicas: int = 1
    current_average: Optional[int] = None
    desired_replicas: int = 1
    last_scale_time: Optional[int] = None
    recommendation_history: list = field(default_factory=list)  # [(t, recommendation)]
    last_event: str = ""


@dataclass(frozen=True)
class ScaleCommand:
    deployment: str
    replicas: int


def collect_average(samples: Iterable, ready_pods: Iterable[str],
                    metric_name: Optional[str] = None) -> Optional[MilliValue]:
    """Mean of the metric over ready pods that reported it; ``None`` if none did."""
    ready = set(ready_pods)
    values = {}
    for s in samples:
        if metric_name is not None and s.name != metric_name:
            continue
        pod = s.labels.get("pod")
        if pod in ready:
            values[pod] = s.value
    if not values:
        return None
    total = sum((Fraction(v) for v in values.values()), Fraction(0))
    return to_millis(total / len(values))


def compute_desired(current: int, avg: int, target: int, tolerance: int) -> int:
    if target <= 0:
        raise ContractViolation("target must be positive")
    # |avg/target - 1| <= tolerance/1000, cross-multiplied
    if abs(avg - target) * 1000 <= tolerance * target:
        return current
    return -(-(current * avg) // target)


def clamp(desired: int, min_replicas: int, max_replicas: int) -> int:
    if min_replicas > max_replicas:
        raise ContractViolation("min_replicas exceeds max_replicas")
    return min(max(desired, min_replicas), max_replicas)


def stabilize(history: Iterable, proposed: int, now: int, window_ms: int,
              current: Optional[int] = None) -> int:
    """Damp scale-in: a lower proposal waits until the window's peak expires.

    Scale-up (``proposed >= current``) passes straight through. Otherwise the
    result is the highest recommendation in ``[now - window, now]``, never
    above ``current``.
    """
    if current is not None and proposed >= current:
        return proposed
    lo = now - window_ms
    peak = max([r for t, r in history if lo <= t <= now] + [proposed])
    return peak if current is None else min(peak, current)


def reconcile(spec: HpaSpec, status: HpaStatus, samples: Iterable, ready_pods: Iterable[str],
              now: int) -> Optional[ScaleCommand]:
    """One controller tick: average, desired count, stabilization, clamp.

    Updates ``status`` in place and returns a command only when the replica
    count should change. ``status.last_event`` names the outcome for tracing.
    """
    avg = collect_average(samples, ready_pods, spec.metric_name)
    status.current_average = avg
    if avg is None:
        status.last_event = "skipped:no-metrics"
        return None
    current = status.current_replicas
    proposed = compute_desired(current, avg, spec.target_average, spec.tolerance)
    stabilized = stabilize(status.recommendation_history, proposed, now,
                           spec.scale_down_stabilization_ms, current)
    n = clamp(stabilized, spec.min_replicas, spec.max_replicas)
    status.recommendation_history.append((now, proposed))
    horizon = now - spec.scale_down_stabilization_ms
    status.recommendation_history = [(t, r) for t, r in status.recommendation_history if t >= horizon]
    status.desired_replicas = n
    if n == current:
        status.last_event = "steady"
        return None
    status.last_event = f"scale:{current}->{n}"
    status.last_scale_time = now
    status.current_replicas = n
    return ScaleCommand(spec.target_deployment, n)


STATUS_HEADER = ("NAME", "REFERENCE", "TARGETS", "MINPODS", "MAXPODS", "REPLICAS")


def status_row(spec: HpaSpec, status: HpaStatus, replicas: Optional[int] = None) -> str:
    avg = "<unknown>" if status.current_average is None else render_milli(status.current_average)
    cells = (spec.target_deployment, f"Deployment/{spec.target_deployment}",
             f"{avg}/{render_milli(spec.target_average)}", str(spec.min_replicas),
             str(spec.max_replicas),
             str(status.current_replicas if replicas is None else replicas))
    return "\t".join(cells)


def render_status(spec: HpaSpec, status: HpaStatus, replicas: Optional[int] = None) -> str:
    return "\t".join(STATUS_HEADER) + "\n" + status_row(spec, status, replicas) + "\n"
