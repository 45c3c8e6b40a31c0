"""IPVS-style virtual service with rr, wrr and lc scheduling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import ContractViolation, NoEndpoint
from .sinkpool import PodPhase

SCHEDULERS = ("rr", "wrr", "lc")


@dataclass
class RealServer:
    addr: str
    weight: int = 1
    forward: str = "Masq"
    active_conns: int = 0
    inactive_conns: int = 0
    draining: bool = False
    pod: Optional[str] = None

    @property
    def selectable(self) -> bool:
        return not self.draining and self.weight > 0


@dataclass
class VirtualService:
    listen_addr: str
    scheduler: str = "rr"
    servers: list = field(default_factory=list)
    rr_cursor: int = 0
    # wrr stepping state: last index visited and current weight
    wrr_index: int = -1
    wrr_cw: int = 0
    conns: dict = field(default_factory=dict)  # conn_id -> RealServer

    def __post_init__(self):
        self.scheduler = self.scheduler.lower()
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}; expected one of {SCHEDULERS}")

    def server(self, addr: str) -> Optional[RealServer]:
        for s in self.servers:
            if s.addr == addr:
                return s
        return None

    def add_server(self, addr: str, weight: int = 1, pod: Optional[str] = None) -> RealServer:
        if self.server(addr) is not None:
            raise ContractViolation(f"duplicate real server {addr}")
        if weight < 0:
            raise ContractViolation("weight must be non-negative")
        rs = RealServer(addr, weight, pod=pod)
        self.servers.append(rs)
        return rs

    def _remove(self, rs: RealServer) -> None:
        idx = self.servers.index(rs)
        del self.servers[idx]
        n = len(self.servers)
        if n == 0:
            self.rr_cursor, self.wrr_index = 0, -1
            return
        if idx < self.rr_cursor:
            self.rr_cursor -= 1
        self.rr_cursor %= n
        if idx <= self.wrr_index:
            self.wrr_index -= 1

    def active_total(self) -> int:
        return sum(s.active_conns for s in self.servers)


def sync_endpoints(vs: VirtualService, pool_snapshot: Iterable, weights: Optional[dict] = None) -> list:
    """Reconcile real servers with ``(pod_id, addr, phase)`` tuples.

    Running pods get a server; servers whose pod is gone or no longer Running
    are drained and removed once their last connection completes.
    """
    weights = weights or {}
    events = []
    running = {}
    for pod_id, addr, phase in pool_snapshot:
        if phase is PodPhase.RUNNING:
            running[addr] = pod_id
    for rs in list(vs.servers):
        if rs.addr in running:
            if rs.draining:
                rs.draining = False
                events.append(("restored", rs.addr))
            continue
        if rs.draining:
            continue
        rs.draining = True
        events.append(("draining", rs.addr))
        if rs.active_conns == 0:
            vs._remove(rs)
            events.append(("removed", rs.addr))
    for addr, pod_id in running.items():
        if vs.server(addr) is None:
            vs.add_server(addr, weights.get(pod_id, 1), pod=pod_id)
            events.append(("added", addr))
    return events


def _pick_rr(vs: VirtualService) -> Optional[int]:
    n = len(vs.servers)
    for step in range(n):
        i = (vs.rr_cursor + step) % n
        if vs.servers[i].selectable:
            vs.rr_cursor = (i + 1) % n
            return i
    return None


def _pick_wrr(vs: VirtualService) -> Optional[int]:
    # interleaved weighted round-robin as in ip_vs_wrr
    weights = [s.weight if s.selectable else 0 for s in vs.servers]
    live = [w for w in weights if w > 0]
    if not live:
        return None
    max_w, step = max(live), math.gcd(*live)
    n = len(weights)
    vs.wrr_cw = min(vs.wrr_cw, max_w)
    while True:
        vs.wrr_index = (vs.wrr_index + 1) % n
        if vs.wrr_index == 0:
            vs.wrr_cw -= step
            if vs.wrr_cw <= 0:
                vs.wrr_cw = max_w
        if weights[vs.wrr_index] >= vs.wrr_cw:
            return vs.wrr_index


def _pick_lc(vs: VirtualService) -> Optional[int]:
    best = None
    for i, s in enumerate(vs.servers):
        if s.selectable and (best is None or s.active_conns < vs.servers[best].active_conns):
            best = i
    return best


_PICKERS = {"rr": _pick_rr, "wrr": _pick_wrr, "lc": _pick_lc}


def schedule(vs: VirtualService, conn_id) -> RealServer:
    if conn_id in vs.conns:
        raise ContractViolation(f"connection {conn_id} already scheduled")
    i = _PICKERS[vs.scheduler](vs) if vs.servers else None
    if i is None:
        raise NoEndpoint(f"no selectable real server behind {vs.listen_addr}")
    rs = vs.servers[i]
    rs.active_conns += 1
    vs.conns[conn_id] = rs
    return rs


def complete(vs: VirtualService, conn_id) -> Optional[str]:
    """Tear down a connection; returns the server address if it was removed."""
    rs = vs.conns.pop(conn_id, None)
    if rs is None:
        raise ContractViolation(f"unknown connection {conn_id}")
    rs.active_conns -= 1
    rs.inactive_conns += 1
    if rs.draining and rs.active_conns == 0:
        vs._remove(rs)
        return rs.addr
    return None


def render_table(vs: VirtualService) -> str:
    lines = [f"TCP {vs.listen_addr} {vs.scheduler}"]
    for s in vs.servers:
        lines.append(f"  -> {s.addr} {s.forward} {s.weight} {s.active_conns} {s.inactive_conns}")
    return "\n".join(lines) + "\n"
