"""Scenario files: JSON, with precedence flags > ``SCALEPOOL_OUTPUT_DIR`` > file > defaults."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from ..balancer import SCHEDULERS
from ..descriptors import DeploymentPlan, compile_plan, parse_nsd, parse_vnfd
from ..errors import ContractViolation
from ..loadgen import LoadProfile

MODES = ("simulated", "realtime")
OVERRIDE_KEYS = ("sync_period", "stabilization", "tolerance", "capacity", "scheduler",
                 "metric_window", "startup_delay", "listen_addr")


class ConfigError(ValueError):
    pass


@dataclass
class LatencyModel:
    base_ms: int = 20
    per_stream_ms: int = 1
    jitter_ms: int = 10


@dataclass
class ScenarioConfig:
    mode: str = "simulated"
    seed: Optional[int] = 0
    profile: LoadProfile = field(default_factory=LoadProfile)
    nsd: object = None  # path (relative to base_dir) or inline object
    vnfds: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    load_start: Optional[float] = None  # seconds; defaults to one sync period
    settle_timeout: float = 600.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    output_dir: str = "out"
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "simulated" and self.seed is None:
            raise ConfigError("simulated mode requires a seed")
        unknown = set(self.overrides) - set(OVERRIDE_KEYS)
        if unknown:
            raise ConfigError(f"unknown overrides: {sorted(unknown)}")
        if self.nsd is None or not self.vnfds:
            raise ConfigError("scenario needs descriptors.nsd and descriptors.vnfds")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["profile"]["stream_hold"] = (list(self.profile.stream_hold)
                                       if isinstance(self.profile.stream_hold, tuple)
                                       else self.profile.stream_hold)
        d.pop("base_dir")
        return d


def _read_document(ref, base_dir: str) -> bytes:
    if isinstance(ref, dict):
        return json.dumps(ref).encode()
    try:
        with open(os.path.join(base_dir, ref), "rb") as fh:
            return fh.read()
    except (OSError, TypeError) as exc:
        raise ConfigError(f"cannot read descriptor {ref!r}: {exc}") from None


def build_plan(config: ScenarioConfig) -> DeploymentPlan:
    """Parse the descriptors and apply overrides; raises ``DescriptorError``."""
    ov = config.overrides
    vnfds = [parse_vnfd(_read_document(ref, config.base_dir)) for ref in config.vnfds]
    nsd = parse_nsd(_read_document(config.nsd, config.base_dir), vnfds)
    hpa = {}
    if "sync_period" in ov:
        hpa["sync_period_ms"] = round(ov["sync_period"] * 1000)
    if "stabilization" in ov:
        hpa["scale_down_stabilization_ms"] = round(ov["stabilization"] * 1000)
    if "tolerance" in ov:
        hpa["tolerance"] = int(ov["tolerance"])
    try:
        plan = compile_plan(nsd, vnfds, **hpa)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    front = plan.deployment(plan.virtual_service.deployment)
    if "capacity" in ov:
        front.capacity = int(ov["capacity"])
        if front.capacity < 1:
            raise ConfigError("capacity must be positive")
    if "startup_delay" in ov:
        front.startup_delay_ms = round(ov["startup_delay"] * 1000)
        if front.startup_delay_ms < 0:
            raise ConfigError("startup_delay must be non-negative")
    if "scheduler" in ov:
        plan.virtual_service.scheduler = str(ov["scheduler"]).lower()
        if plan.virtual_service.scheduler not in SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {SCHEDULERS}")
    if "listen_addr" in ov:
        plan.virtual_service.listen_addr = ov["listen_addr"]
    elif config.mode == "realtime":
        plan.virtual_service.listen_addr = "127.0.0.1:0"
    return plan


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def config_from_dict(doc: dict, base_dir: str = ".") -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    known = {"mode", "seed", "profile", "descriptors", "overrides", "load_start",
             "settle_timeout", "latency", "output_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    desc = doc.get("descriptors") or {}
    try:
        profile = LoadProfile(**doc.get("profile", {}))
        latency = LatencyModel(**doc.get("latency", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ContractViolation as exc:
        raise ConfigError(f"profile: {exc}") from None
    return ScenarioConfig(
        mode=doc.get("mode", "simulated"),
        seed=doc.get("seed", 0),
        profile=profile,
        nsd=desc.get("nsd"),
        vnfds=list(desc.get("vnfds", [])),
        overrides=dict(doc.get("overrides", {})),
        load_start=doc.get("load_start"),
        settle_timeout=float(doc.get("settle_timeout", 600.0)),
        latency=latency,
        output_dir=doc.get("output_dir", "out"),
        base_dir=base_dir,
    )


def load_scenario(path: str, flags: Optional[dict] = None) -> ScenarioConfig:
    """Read a scenario file and layer environment and command-line values on top.

    ``flags`` uses the file's own shape, e.g. ``{"seed": 7, "profile":
    {"target_users": 10}}``; ``None`` entries are ignored.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    env_dir = os.environ.get("SCALEPOOL_OUTPUT_DIR")
    if env_dir:
        doc["output_dir"] = env_dir
    doc = _merge(doc, flags or {})
    return config_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))
