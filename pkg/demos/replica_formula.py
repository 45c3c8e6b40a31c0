"""
Replica arithmetic of the autoscaler
====================================

Walk one pool from a single overloaded pod up to the ceiling and back.
"""
from scalepool.autoscaler import HpaSpec, HpaStatus, clamp, compute_desired, reconcile, render_status
from scalepool.metrics import Sample, render_milli

# one pod serving 2.913 requests/s against a target of 1 per pod
print(compute_desired(1, 2913, 1000, 100))            # 3

# ten pods at 942m sit inside the 10% dead band, so nothing moves
print(compute_desired(10, 942, 1000, 100))            # 10

# a big overload asks for more than the ceiling allows
print(clamp(compute_desired(1, 24833, 1000, 100), 1, 10))

# the same thing through a full reconcile tick
spec = HpaSpec("vsp", scale_down_stabilization_ms=60_000)
status = HpaStatus(current_replicas=1)
pods = ["vsp-0"]
cmd = reconcile(spec, status, [Sample("vsp_http_request_rate", {"pod": "vsp-0"}, 2.913)], pods, 0)
print(cmd, status.last_event)
print(render_status(spec, status))

# when load vanishes the scale-in waits for the window to forget the peak
pods = [f"vsp-{i}" for i in range(3)]
idle = [Sample("vsp_http_request_rate", {"pod": p}, 0.0) for p in pods]
for t in range(15_000, 90_000, 15_000):
    cmd = reconcile(spec, status, idle, pods, t)
    print(t // 1000, "s", render_milli(status.current_average), status.last_event)
