"""Metric registry, counter rates, milli-unit values and the text exposition format.

Metric values that feed the autoscaler are carried as integer milli-units
(``2913`` means 2.913), rendered the way ``kubectl get hpa`` shows them:
``2913m``, or ``2`` for whole units.
"""
from __future__ import annotations

import logging
import math
import re
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, NewType, Optional, Union

from .errors import ContractViolation

log = logging.getLogger(__name__)

MilliValue = NewType("MilliValue", int)

METRIC_NAME_RE = re.compile(r"[a-zA-Z_:][a-zA-Z0-9_:]*")
LABEL_NAME_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")
_MILLI_RE = re.compile(r"([+-]?[0-9]+)(m?)")

REQUESTS_TOTAL = "vsp_http_requests_total"
ACTIVE_STREAMS = "vsp_active_streams"
REQUEST_RATE = "vsp_http_request_rate"

CONTENT_TYPE = "text/plain; version=0.0.4"


class MilliFormatError(ValueError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"malformed milli-value {token!r}")


def parse_milli(text: str) -> MilliValue:
    """``"2913m"`` -> 2913, ``"1"`` -> 1000."""
    m = _MILLI_RE.fullmatch(text.strip()) if isinstance(text, str) else None
    if m is None:
        raise MilliFormatError(str(text))
    n = int(m.group(1))
    return MilliValue(n if m.group(2) else n * 1000)


def render_milli(millis: int) -> str:
    if millis % 1000 == 0:
        return str(millis // 1000)
    return f"{millis}m"


def to_millis(value: float) -> MilliValue:
    """Convert a real metric value to millis, rounding half away from zero."""
    exact = Fraction(value) * 1000
    whole, rem = divmod(abs(exact), 1)
    if rem >= Fraction(1, 2):
        whole += 1
    return MilliValue(int(whole) if exact >= 0 else -int(whole))


LabelKey = tuple  # tuple[tuple[str, str], ...] sorted by label name


def label_key(labels: Optional[dict]) -> LabelKey:
    return tuple(sorted((labels or {}).items()))


@dataclass
class Sample:
    name: str
    labels: dict
    value: float
    timestamp: int = 0  # ms since experiment epoch

    @property
    def key(self) -> tuple:
        return (self.name, label_key(self.labels))


@dataclass
class CounterSeries:
    key: tuple
    points: list = field(default_factory=list)  # [(timestamp_ms, cumulative)]

    def append(self, timestamp: int, value: float) -> None:
        if value < 0:
            raise ContractViolation(f"negative counter value {value} for {self.key}")
        if self.points and timestamp < self.points[-1][0]:
            raise ContractViolation(
                f"timestamp {timestamp} precedes {self.points[-1][0]} in {self.key}")
        self.points.append((timestamp, value))

    def prune(self, before: int) -> None:
        """Drop points older than ``before``, keeping the newest of them."""
        i = 0
        while i + 1 < len(self.points) and self.points[i + 1][0] <= before:
            i += 1
        if i:
            del self.points[:i]


def window_points(series: CounterSeries, window_ms: int, now: int) -> list:
    lo = now - window_ms
    return [(t, v) for t, v in series.points if lo <= t <= now]


def window_rate(series: CounterSeries, window_ms: int, now: int) -> float:
    """Per-second increase of a counter over ``[now - window, now]``.

    A decrease between consecutive points is a counter reset and the later
    value counts as the whole delta.
    """
    if window_ms <= 0:
        raise ContractViolation("window must be positive")
    pts = window_points(series, window_ms, now)
    if len(pts) < 2:
        return 0.0
    increase = 0.0
    for (_, prev), (_, cur) in zip(pts, pts[1:]):
        increase += cur - prev if cur >= prev else cur
    return increase / (window_ms / 1000)


class Registry:
    """Thread-safe store of counters and gauges keyed by name and labels."""

    def __init__(self):
        self._lock = threading.Lock()
        self._values: dict = {}
        self._kinds: dict = {}
        self._stamps: dict = {}

    def _check(self, name, labels, kind):
        if not METRIC_NAME_RE.fullmatch(name):
            raise ContractViolation(f"invalid metric name {name!r}")
        for k in labels or {}:
            if not LABEL_NAME_RE.fullmatch(k):
                raise ContractViolation(f"invalid label name {k!r}")
        seen = self._kinds.get(name)
        if seen is not None and seen != kind:
            raise ContractViolation(f"{name} already registered as a {seen}")

    def inc(self, name: str, labels: Optional[dict] = None, amount: float = 1,
            now: int = 0) -> None:
        if amount < 0:
            raise ContractViolation(f"counter {name} cannot decrease (amount {amount})")
        key = (name, label_key(labels))
        with self._lock:
            self._check(name, labels, "counter")
            self._kinds[name] = "counter"
            self._values[key] = self._values.get(key, 0) + amount
            self._stamps[key] = now

    def set(self, name: str, labels: Optional[dict] = None, value: float = 0,
            now: int = 0) -> None:
        key = (name, label_key(labels))
        with self._lock:
            self._check(name, labels, "gauge")
            self._kinds[name] = "gauge"
            self._values[key] = value
            self._stamps[key] = now

    def get(self, name: str, labels: Optional[dict] = None) -> float:
        with self._lock:
            return self._values.get((name, label_key(labels)), 0)

    def kind(self, name: str) -> Optional[str]:
        return self._kinds.get(name)

    def snapshot(self) -> list:
        with self._lock:
            items = sorted(self._values.items())
            stamps = dict(self._stamps)
        return [Sample(name, dict(labels), value, stamps[(name, labels)])
                for (name, labels), value in items]

    def __len__(self):
        return len(self._values)


def increment_counter(registry: Registry, name: str, labels: Optional[dict],
                      amount: float, now: int = 0) -> None:
    registry.inc(name, labels, amount, now)


# -- exposition -------------------------------------------------------------

def format_value(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    if float(v).is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def encode_exposition(source: Union[Registry, Iterable[Sample]]) -> str:
    samples = source.snapshot() if isinstance(source, Registry) else list(source)
    samples.sort(key=lambda s: s.key)
    lines = []
    for s in samples:
        if s.labels:
            body = ",".join(f'{k}="{_escape(str(v))}"' for k, v in sorted(s.labels.items()))
            lines.append(f"{s.name}{{{body}}} {format_value(s.value)}\n")
        else:
            lines.append(f"{s.name} {format_value(s.value)}\n")
    return "".join(lines)


class ExpositionParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


_UNESCAPE = {"\\": "\\", "n": "\n", '"': '"'}


def _parse_labels(line: str, pos: int, line_no: int):
    labels = {}
    pos += 1  # past '{'
    while True:
        while pos < len(line) and line[pos] in " \t":
            pos += 1
        if pos < len(line) and line[pos] == "}":
            return labels, pos + 1
        m = LABEL_NAME_RE.match(line, pos)
        if not m:
            raise ExpositionParseError(line_no, f"bad label name at column {pos + 1}")
        name = m.group(0)
        pos = m.end()
        if line[pos:pos + 2] != '="':
            raise ExpositionParseError(line_no, f"expected '=\"' after label {name}")
        pos += 2
        buf = []
        while True:
            if pos >= len(line):
                raise ExpositionParseError(line_no, "unterminated label value")
            c = line[pos]
            if c == "\\":
                if pos + 1 >= len(line) or line[pos + 1] not in _UNESCAPE:
                    raise ExpositionParseError(line_no, "bad escape in label value")
                buf.append(_UNESCAPE[line[pos + 1]])
                pos += 2
            elif c == '"':
                pos += 1
                break
            else:
                buf.append(c)
                pos += 1
        if name in labels:
            raise ExpositionParseError(line_no, f"duplicate label {name}")
        labels[name] = "".join(buf)
        if pos < len(line) and line[pos] == ",":
            pos += 1
        elif pos < len(line) and line[pos] == "}":
            return labels, pos + 1
        else:
            raise ExpositionParseError(line_no, "expected ',' or '}' in label set")


def _parse_value(token: str, line_no: int) -> float:
    special = {"+Inf": math.inf, "Inf": math.inf, "-Inf": -math.inf, "NaN": math.nan}
    if token in special:
        return special[token]
    try:
        return float(token)
    except ValueError:
        raise ExpositionParseError(line_no, f"bad sample value {token!r}") from None


def parse_exposition(text: str) -> list:
    samples = []
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = METRIC_NAME_RE.match(line)
        if not m:
            raise ExpositionParseError(line_no, "bad metric name")
        name, pos = m.group(0), m.end()
        labels = {}
        if pos < len(line) and line[pos] == "{":
            labels, pos = _parse_labels(line, pos, line_no)
        rest = line[pos:]
        if rest and rest[0] not in " \t":
            raise ExpositionParseError(line_no, f"unexpected {rest[0]!r} after metric name")
        fields = rest.split()
        if len(fields) not in (1, 2):
            raise ExpositionParseError(line_no, "expected '<value> [timestamp]'")
        value = _parse_value(fields[0], line_no)
        ts = 0
        if len(fields) == 2:
            try:
                ts = int(fields[1])
            except ValueError:
                raise ExpositionParseError(line_no, f"bad timestamp {fields[1]!r}") from None
        samples.append(Sample(name, labels, value, ts))
    return samples


# -- scraping ---------------------------------------------------------------

@dataclass
class ScrapeTarget:
    pod: str
    fetch: Callable[[], str]  # returns exposition text; raises on failure


@dataclass
class ScrapeFailure:
    pod: str
    timestamp: int
    error: str


def scrape(targets: Iterable[ScrapeTarget], now: int,
           failures: Optional[list] = None) -> list:
    """Pull every target; failed targets contribute no samples."""
    out = []
    for target in targets:
        try:
            samples = parse_exposition(target.fetch())
        except Exception as exc:  # any transport or format failure
            log.warning("scrape of %s failed: %s", target.pod, exc)
            if failures is not None:
                failures.append(ScrapeFailure(target.pod, now, str(exc)))
            continue
        for s in samples:
            s.timestamp = now
            s.labels.setdefault("pod", target.pod)
        out.extend(samples)
    return out


class CustomMetricsAdapter:
    """Turns scraped pod samples into per-pod custom metric values.

    Counters are kept as series and served as a windowed rate; a pod whose
    series has fewer than two points inside the window is reported as having
    no value yet, rather than a rate of zero.
    """

    def __init__(self, window_ms: int = 30_000):
        self.window_ms = window_ms
        self.series: dict = {}

    def observe(self, samples: Iterable[Sample]) -> None:
        for s in samples:
            if s.name != REQUESTS_TOTAL:
                continue
            pod = s.labels.get("pod")
            series = self.series.get(pod)
            if series is None:
                series = self.series[pod] = CounterSeries((REQUESTS_TOTAL, pod))
            series.append(s.timestamp, s.value)

    def forget_missing(self, live_pods: Iterable[str]) -> None:
        live = set(live_pods)
        for pod in [p for p in self.series if p not in live]:
            del self.series[pod]

    def metric_samples(self, metric_name: str, samples: Iterable[Sample], now: int) -> list:
        if metric_name == REQUEST_RATE:
            out = []
            for pod, series in self.series.items():
                series.prune(now - self.window_ms)
                if len(window_points(series, self.window_ms, now)) < 2:
                    continue
                out.append(Sample(REQUEST_RATE, {"pod": pod},
                                  window_rate(series, self.window_ms, now), now))
            return out
        return [s for s in samples if s.name == metric_name]
