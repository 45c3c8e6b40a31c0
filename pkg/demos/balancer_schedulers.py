"""
Three schedulers behind one virtual address
===========================================
"""
from collections import Counter

from scalepool.balancer import VirtualService, complete, render_table, schedule, sync_endpoints
from scalepool.sinkpool import PodPhase


def fill(scheduler, weights, n):
    vs = VirtualService("192.168.39.55:30000", scheduler)
    for i, w in enumerate(weights):
        vs.add_server(f"172.17.0.{10 + i}:8080", w)
    hits = Counter(schedule(vs, c).addr for c in range(n))
    return vs, [hits[s.addr] for s in vs.servers]


# round robin spreads evenly, weighted round robin in proportion
print(fill("rr", (1, 1, 1), 7)[1])         # [3, 2, 2]
print(fill("wrr", (2, 1), 300)[1])         # [200, 100]

# least connections keeps the spread within one
print(fill("lc", (1, 1, 1, 1), 10)[1])

# a pod leaving the pool drains: no new connections, removal after the last one ends
vs, _ = fill("rr", (1, 1), 4)
pods = [("vsp-a", "172.17.0.10:8080", PodPhase.DRAINING), ("vsp-b", "172.17.0.11:8080", PodPhase.RUNNING)]
print(sync_endpoints(vs, pods))
print(render_table(vs))
complete(vs, 0)
print(complete(vs, 2), "removed")
print(render_table(vs))
