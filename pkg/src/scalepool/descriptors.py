"""VNFD/NSD-style JSON descriptors and their compilation into a deployment plan.

Schema (all keys required unless noted)::

    VNFD  {"id", "name",
           "vdu": {"capacity": int > 0, "startup_delay": seconds >= 0},
           "scaling": {"metric_name", "threshold": "1" | "942m" | int,
                       "min_replicas", "max_replicas"}        (optional)
           "connection_points": [str, ...]}

    NSD   {"id", "vnf_refs": [vnfd id, ...],
           "virtual_links": [{"name", "endpoints": [{"vnf_id", "connection_point"}]}],
           "virtual_service": {"listen_addr", "scheduler"}}    (optional)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .autoscaler import HpaSpec
from .balancer import SCHEDULERS
from .metrics import ACTIVE_STREAMS, REQUEST_RATE, MilliFormatError, parse_milli, render_milli

DEFAULT_LISTEN_ADDR = "192.168.39.55:30000"
METRICS = (REQUEST_RATE, ACTIVE_STREAMS)
MAX_STARTUP_DELAY = 86_400  # seconds


class DescriptorError(ValueError):
    kind = "descriptor"

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{self.kind} error at {path}: {message}")

    def to_dict(self) -> dict:
        return {"error": self.kind, "path": self.path, "message": self.message}


class SchemaError(DescriptorError):
    kind = "schema"


class ValidationError(DescriptorError):
    kind = "validation"


class CompileError(DescriptorError):
    kind = "compile"


@dataclass
class Vdu:
    capacity: int
    startup_delay: float


@dataclass
class ScalingPolicy:
    metric_name: str
    threshold: int  # millis
    min_replicas: int
    max_replicas: int


@dataclass
class VnfDescriptor:
    id: str
    name: str
    vdu: Vdu
    connection_points: list
    scaling: Optional[ScalingPolicy] = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "name": self.name, "vdu": asdict(self.vdu),
             "connection_points": list(self.connection_points)}
        if self.scaling is not None:
            s = asdict(self.scaling)
            s["threshold"] = render_milli(self.scaling.threshold)
            d["scaling"] = s
        return d


@dataclass
class LinkEndpoint:
    vnf_id: str
    connection_point: str


@dataclass
class VirtualLink:
    name: str
    endpoints: list


@dataclass
class NsDescriptor:
    id: str
    vnf_refs: list
    virtual_links: list = field(default_factory=list)
    listen_addr: str = DEFAULT_LISTEN_ADDR
    scheduler: str = "rr"

    def to_dict(self) -> dict:
        return {"id": self.id, "vnf_refs": list(self.vnf_refs),
                "virtual_links": [asdict(v) for v in self.virtual_links],
                "virtual_service": {"listen_addr": self.listen_addr, "scheduler": self.scheduler}}


@dataclass
class DeploymentTemplate:
    name: str
    capacity: int
    startup_delay_ms: int
    replicas: int


@dataclass
class VirtualServiceConfig:
    listen_addr: str
    scheduler: str
    deployment: str


@dataclass
class DeploymentPlan:
    deployments: list
    virtual_service: VirtualServiceConfig
    hpas: list

    @property
    def hpa(self) -> Optional[HpaSpec]:
        return self.hpas[0] if self.hpas else None

    def deployment(self, name: str) -> DeploymentTemplate:
        return next(d for d in self.deployments if d.name == name)


# -- field access with JSON paths -------------------------------------------

_TYPE_NAMES = {str: "string", int: "integer", list: "array", dict: "object"}


def _load(document) -> Any:
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError("$", f"not UTF-8: {exc.reason}") from None
    try:
        return json.loads(document)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None


def _get(obj: dict, key: str, path: str, typ, required: bool = True):
    if key not in obj:
        if required:
            raise SchemaError(f"{path}.{key}", "missing required field")
        return None
    value = obj[key]
    if typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        name = _TYPE_NAMES.get(typ, "number")
        raise SchemaError(f"{path}.{key}", f"expected {name}, got {type(value).__name__}")
    return value


def _object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path, f"expected object, got {type(value).__name__}")
    return value


def _strings(values: list, path: str) -> list:
    for i, v in enumerate(values):
        if not isinstance(v, str):
            raise SchemaError(f"{path}[{i}]", "expected string")
    return list(values)


def _threshold(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise SchemaError(path, "expected milli-value string or integer")
    if isinstance(value, int):
        return value * 1000
    try:
        return parse_milli(value)
    except MilliFormatError as exc:
        raise SchemaError(path, str(exc)) from None


def vnfd_from_obj(obj, path: str = "$") -> VnfDescriptor:
    obj = _object(obj, path)
    vid = _get(obj, "id", path, str)
    name = _get(obj, "name", path, str)
    vdu_obj = _object(_get(obj, "vdu", path, dict), f"{path}.vdu")
    capacity = _get(vdu_obj, "capacity", f"{path}.vdu", int)
    delay = _get(vdu_obj, "startup_delay", f"{path}.vdu", float)
    cps = _strings(_get(obj, "connection_points", path, list), f"{path}.connection_points")
    if not vid:
        raise ValidationError(f"{path}.id", "must be non-empty")
    if not name:
        raise ValidationError(f"{path}.name", "must be non-empty")
    if capacity < 1:
        raise ValidationError(f"{path}.vdu.capacity", "must be positive")
    if delay < 0 or delay > MAX_STARTUP_DELAY or not math.isfinite(delay):
        raise ValidationError(f"{path}.vdu.startup_delay", f"must be between 0 and {MAX_STARTUP_DELAY} seconds")
    if len(set(cps)) != len(cps):
        raise ValidationError(f"{path}.connection_points", "duplicate connection point")
    scaling = None
    sc = _get(obj, "scaling", path, dict, required=False)
    if sc is not None:
        sp = f"{path}.scaling"
        metric = _get(sc, "metric_name", sp, str)
        if "threshold" not in sc:
            raise SchemaError(f"{sp}.threshold", "missing required field")
        threshold = _threshold(sc["threshold"], f"{sp}.threshold")
        lo = _get(sc, "min_replicas", sp, int)
        hi = _get(sc, "max_replicas", sp, int)
        if metric not in METRICS:
            raise ValidationError(f"{sp}.metric_name", f"unknown metric {metric!r}; expected one of {METRICS}")
        if threshold <= 0:
            raise ValidationError(f"{sp}.threshold", "must be positive")
        if lo < 1:
            raise ValidationError(f"{sp}.min_replicas", "must be at least 1")
        if lo > hi:
            raise ValidationError(f"{sp}.min_replicas", f"min_replicas {lo} exceeds max_replicas {hi}")
        scaling = ScalingPolicy(metric, threshold, lo, hi)
    return VnfDescriptor(vid, name, Vdu(capacity, float(delay)), cps, scaling)


def parse_vnfd(document) -> VnfDescriptor:
    return vnfd_from_obj(_load(document))


def parse_nsd(document, vnfds: Optional[list] = None) -> NsDescriptor:
    """Parse an NSD; with ``vnfds`` also check connection points exist."""
    obj = _object(_load(document), "$")
    nid = _get(obj, "id", "$", str)
    refs = _strings(_get(obj, "vnf_refs", "$", list), "$.vnf_refs")
    links_raw = _get(obj, "virtual_links", "$", list)
    if not nid:
        raise ValidationError("$.id", "must be non-empty")
    if len(set(refs)) != len(refs):
        raise ValidationError("$.vnf_refs", "duplicate vnf reference")
    by_id = {v.id: v for v in vnfds or []}
    links = []
    for i, raw in enumerate(links_raw):
        lp = f"$.virtual_links[{i}]"
        link = _object(raw, lp)
        lname = _get(link, "name", lp, str)
        eps = []
        for j, ep_raw in enumerate(_get(link, "endpoints", lp, list)):
            ep_path = f"{lp}.endpoints[{j}]"
            ep = _object(ep_raw, ep_path)
            vnf_id = _get(ep, "vnf_id", ep_path, str)
            cp = _get(ep, "connection_point", ep_path, str)
            if vnf_id not in refs:
                raise ValidationError(f"{ep_path}.vnf_id", f"unknown vnf_ref {vnf_id!r}")
            if vnf_id in by_id and cp not in by_id[vnf_id].connection_points:
                raise ValidationError(f"{ep_path}.connection_point",
                                      f"{vnf_id} has no connection point {cp!r}")
            eps.append(LinkEndpoint(vnf_id, cp))
        links.append(VirtualLink(lname, eps))
    listen_addr, scheduler = DEFAULT_LISTEN_ADDR, "rr"
    vs = _get(obj, "virtual_service", "$", dict, required=False)
    if vs is not None:
        listen_addr = _get(vs, "listen_addr", "$.virtual_service", str)
        scheduler = _get(vs, "scheduler", "$.virtual_service", str).lower()
        if scheduler not in SCHEDULERS:
            raise ValidationError("$.virtual_service.scheduler", f"expected one of {SCHEDULERS}")
        host, sep, port = listen_addr.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ValidationError("$.virtual_service.listen_addr", "expected host:port")
    return NsDescriptor(nid, refs, links, listen_addr, scheduler)


def compile_plan(nsd: NsDescriptor, vnfds: list, **hpa_overrides) -> DeploymentPlan:
    """Build the runtime plan; ``hpa_overrides`` are extra ``HpaSpec`` fields."""
    by_id = {}
    for v in vnfds:
        if v.id in by_id:
            raise CompileError(f"$.vnfd[{v.id}]", "duplicate vnfd id")
        by_id[v.id] = v
    deployments, hpas, names = [], [], set()
    for i, ref in enumerate(nsd.vnf_refs):
        if ref not in by_id:
            raise CompileError(f"$.vnf_refs[{i}]", f"no vnfd with id {ref!r}")
        v = by_id[ref]
        if v.name in names:
            raise CompileError(f"$.vnf_refs[{i}]", f"duplicate deployment name {v.name!r}")
        names.add(v.name)
        replicas = v.scaling.min_replicas if v.scaling else 1
        deployments.append(DeploymentTemplate(v.name, v.vdu.capacity,
                                              round(v.vdu.startup_delay * 1000), replicas))
        if v.scaling:
            hpas.append(HpaSpec(target_deployment=v.name, target_average=v.scaling.threshold,
                                min_replicas=v.scaling.min_replicas,
                                max_replicas=v.scaling.max_replicas,
                                metric_name=v.scaling.metric_name, **hpa_overrides))
    for link in nsd.virtual_links:
        for j, ep in enumerate(link.endpoints):
            if ep.connection_point not in by_id[ep.vnf_id].connection_points:
                raise CompileError(f"$.virtual_links[{link.name}].endpoints[{j}]",
                                   f"{ep.vnf_id} has no connection point {ep.connection_point!r}")
    if not deployments:
        raise CompileError("$.vnf_refs", "network service references no vnfd")
    front = hpas[0].target_deployment if hpas else deployments[0].name
    return DeploymentPlan(deployments, VirtualServiceConfig(nsd.listen_addr, nsd.scheduler, front), hpas)


def load_descriptor(path: str):
    """Parse a ``*.vnfd.json`` or ``*.nsd.json`` file, guessing by name then content."""
    with open(path, "rb") as fh:
        data = fh.read()
    if path.endswith(".nsd.json"):
        return parse_nsd(data)
    if path.endswith(".vnfd.json"):
        return parse_vnfd(data)
    obj = _load(data)
    if isinstance(obj, dict) and "vnf_refs" in obj:
        return parse_nsd(data)
    return parse_vnfd(data)
