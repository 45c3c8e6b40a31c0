"""Wall-clock execution: every pod, the virtual service and the controller speak HTTP.

Endpoints:

* pod        ``POST /upload?stream=<id>`` -> 200 ``admitted <id>`` | 503 ``denied <reason>``
             ``DELETE /upload/<id>``      -> 200 ``released <id>`` | 404
             ``GET /metrics``             -> exposition text
* service    same ``/upload`` routes, forwarded to the scheduled pod and relayed verbatim;
             503 ``no endpoint`` when nothing is selectable
* controller ``GET /endpoint``            -> ``<host>:<port>`` of the virtual service
"""
from __future__ import annotations

import http.client
import logging
import threading
import time
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from ..balancer import complete
from ..descriptors import DeploymentPlan
from ..errors import ContractViolation
from ..loadgen import run_user, spawn_offsets_ms
from ..metrics import CONTENT_TYPE, ScrapeTarget, encode_exposition
from ..sinkpool import PodPhase, pod_samples
from .config import ScenarioConfig, build_plan
from .experiment import Experiment, ExperimentResult
from .rng import SplitMix64

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def reply(self, code: int, body: str, content_type: str = "text/plain") -> None:
        data = body.encode()
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def stream_id(self) -> Optional[str]:
        url = urllib.parse.urlsplit(self.path)
        if url.path == "/upload":
            return urllib.parse.parse_qs(url.query).get("stream", [None])[0]
        if url.path.startswith("/upload/"):
            return url.path[len("/upload/"):]
        return None


def _serve(handler_cls, host: str, port: int, **attrs) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), handler_cls)
    server.daemon_threads = True
    for k, v in attrs.items():
        setattr(server, k, v)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def _close(server: ThreadingHTTPServer) -> None:
    server.shutdown()
    server.server_close()


def _addr(server: ThreadingHTTPServer) -> str:
    host, port = server.server_address[:2]
    return f"{host}:{port}"


def _forward(addr: str, method: str, path: str) -> tuple:
    host, port = addr.rsplit(":", 1)
    conn = http.client.HTTPConnection(host, int(port), timeout=5)
    try:
        conn.request(method, path, body=b"" if method == "POST" else None)
        resp = conn.getresponse()
        return resp.status, resp.read().decode()
    finally:
        conn.close()


class PodHandler(_Handler):
    def do_GET(self):
        runner, pod_id = self.server.runner, self.server.pod_id
        if self.path != "/metrics":
            return self.reply(404, "not found")
        with runner.exp.lock:
            text = encode_exposition(pod_samples(runner.exp.deployment.pod(pod_id), runner.clock()))
        self.reply(200, text, CONTENT_TYPE)

    def do_POST(self):
        runner, pod_id = self.server.runner, self.server.pod_id
        sid = self.stream_id()
        if sid is None:
            return self.reply(400, "missing stream id")
        with runner.exp.lock:
            result = runner.exp.pool.admit(pod_id, sid)
        if result.admitted:
            self.reply(200, f"admitted {sid}")
        else:
            self.reply(503, f"denied {result.value}")

    def do_DELETE(self):
        runner, pod_id = self.server.runner, self.server.pod_id
        sid = self.stream_id()
        try:
            with runner.exp.lock:
                runner.exp.pool.release(pod_id, sid)
        except ContractViolation as exc:
            return self.reply(404, str(exc))
        self.reply(200, f"released {sid}")


class ServiceHandler(_Handler):
    def do_POST(self):
        exp = self.server.runner.exp
        sid = self.stream_id()
        if sid is None:
            return self.reply(400, "missing stream id")
        with exp.lock:
            rs = exp.route(sid)
            if rs is None:
                return self.reply(503, "no endpoint")
            exp.inflight += 1
            addr, pod = rs.addr, rs.pod
        try:
            status, body = _forward(addr, "POST", self.path)
        except OSError as exc:
            status, body = 502, f"upstream error {exc}"
        with exp.lock:
            exp.inflight -= 1
            exp.settle(sid, pod, status == 200)
            exp.audit()
        self.reply(status, body)

    def do_DELETE(self):
        exp = self.server.runner.exp
        sid = self.stream_id()
        with exp.lock:
            pod = exp.routes.pop(sid, None)
            if pod is None:
                return self.reply(404, f"unknown stream {sid}")
            addr = exp.vs.conns[sid].addr
            exp.inflight += 1
        try:
            status, body = _forward(addr, "DELETE", self.path)
        finally:
            with exp.lock:
                exp.inflight -= 1
                complete(exp.vs, sid)
                exp.audit()
        self.reply(status, body)


class ControllerHandler(_Handler):
    def do_GET(self):
        if self.path != "/endpoint":
            return self.reply(404, "not found")
        try:
            self.reply(200, controller_endpoint(self.server.runner.service))
        except ServiceUnavailable as exc:
            self.reply(503, str(exc))


class ServiceUnavailable(Exception):
    pass


def controller_endpoint(service: Optional[ThreadingHTTPServer]) -> str:
    """Address clients should upload to: the virtual service, never a pod."""
    if service is None:
        raise ServiceUnavailable("virtual service not started")
    return _addr(service)


class RealTimeRunner:
    def __init__(self, config: ScenarioConfig, plan: Optional[DeploymentPlan] = None):
        self.config = config
        self.plan = plan or build_plan(config)
        self.t0 = time.monotonic()
        self.rng = SplitMix64(config.seed or 0)
        self.pod_servers: dict = {}
        self.service: Optional[ThreadingHTTPServer] = None
        self.exp = Experiment(config, self.plan, self.clock, self.defer, addr_for=self._start_pod)
        self.exp.lock = threading.RLock()
        self.exp.pool.listeners.append(self._on_lifecycle)
        self.controller = _serve(ControllerHandler, "127.0.0.1", 0, runner=self)
        self.timers: list = []

    def clock(self) -> int:
        return int((time.monotonic() - self.t0) * 1000)

    def defer(self, delay_ms: int, fn) -> None:
        def fire():
            with self.exp.lock:
                fn()
        timer = threading.Timer(delay_ms / 1000, fire)
        timer.daemon = True
        self.timers.append(timer)
        timer.start()

    def _start_pod(self, pod) -> str:
        server = _serve(PodHandler, "127.0.0.1", 0, runner=self, pod_id=pod.id)
        self.pod_servers[pod.id] = server
        return _addr(server)

    def _on_lifecycle(self, ev) -> None:
        if ev.event == PodPhase.TERMINATED.value:
            server = self.pod_servers.pop(ev.pod, None)
            if server is not None:
                threading.Thread(target=_close, args=(server,), daemon=True).start()

    def _targets(self) -> list:
        with self.exp.lock:
            pods = [(p.id, p.addr) for p in self.exp.deployment.running_pods()]

        def fetch(addr):
            status, body = _forward(addr, "GET", "/metrics")
            if status != 200:
                raise OSError(f"/metrics answered {status}")
            return body
        return [ScrapeTarget(pid, lambda a=addr: fetch(a)) for pid, addr in pods]

    def _autoscaler(self, stop: threading.Event, sync_s: float) -> None:
        while True:
            self.exp.tick(self._targets())
            if stop.wait(sync_s):
                return

    def run(self) -> ExperimentResult:
        cfg, exp = self.config, self.exp
        spec = exp.spec
        sync_s = (spec.sync_period_ms if spec else 15_000) / 1000
        host, port = self.plan.virtual_service.listen_addr.rsplit(":", 1)
        with exp.lock:
            exp.start()
        self.service = _serve(ServiceHandler, host, int(port), runner=self)
        exp.vs.listen_addr = _addr(self.service)
        stop_scaler, stop_users = threading.Event(), threading.Event()
        scaler = threading.Thread(target=self._autoscaler, args=(stop_scaler, sync_s), daemon=True)
        scaler.start()

        load_start = sync_s if cfg.load_start is None else cfg.load_start
        time.sleep(max(0.0, load_start - (time.monotonic() - self.t0)))
        exp.load_start = self.clock()
        exp.load_end = exp.load_start + round(cfg.profile.run_duration * 1000)
        with exp.lock:
            exp.row("load:start")
        users = []

        def emit(rec):
            with exp.lock:
                exp.record(rec)
        controller = _addr(self.controller)
        for user_id, offset in enumerate(spawn_offsets_ms(cfg.profile)):
            at = exp.load_start + offset
            if at >= exp.load_end:
                break
            if stop_users.wait(max(0.0, (at - self.clock()) / 1000)):
                break
            th = threading.Thread(target=run_user, daemon=True,
                                  args=(user_id, controller, cfg.profile, stop_users, emit,
                                        self.clock, SplitMix64(self.rng.next_u64())))
            th.start()
            users.append(th)
        time.sleep(max(0.0, (exp.load_end - self.clock()) / 1000))
        stop_users.set()
        for th in users:
            th.join(timeout=10)
        with exp.lock:
            exp.row("load:stop")

        deadline = exp.load_end + round(cfg.settle_timeout * 1000)
        while self.clock() < deadline:
            with exp.lock:
                if exp.settled():
                    break
            time.sleep(min(0.05, sync_s))
        else:
            exp.violate("settle timeout", "pool not back at the floor")
        stop_scaler.set()
        scaler.join(timeout=10)
        with exp.lock:
            result = exp.finish()
        self.shutdown()
        return result

    def shutdown(self) -> None:
        for timer in self.timers:
            timer.cancel()
        for server in [self.service, self.controller, *self.pod_servers.values()]:
            if server is not None:
                _close(server)
        self.pod_servers.clear()


def run_realtime(config: ScenarioConfig, plan: Optional[DeploymentPlan] = None) -> ExperimentResult:
    return RealTimeRunner(config, plan).run()
