"""
The reference scale-out run
===========================

100 users hatched at 10/s against a pool of 20-stream pods, min 1, max 10.
Everything runs on the logical clock, so this takes well under a second.
"""
import os

from scalepool.harness.config import load_scenario
from scalepool.harness.simulation import Simulation

here = os.path.dirname(os.path.abspath(__file__))
config = load_scenario(os.path.join(here, "..", "scenarios", "reference.json"))

sim = Simulation(config)
sim.keep_snapshots = True
result = sim.run()

# one line per autoscaler tick: time, running pods, average metric, decision
for row in result.trace.tick_rows():
    avg = row["avg_metric_millis"]
    print(f"{row['t'] / 1000:6.0f}s  running={row['replicas_running']:2d}  "
          f"avg={'-' if avg is None else avg:>6}  denied={row['denied_total']:4d}  "
          f"{'|'.join(e for e in row['events'] if e.startswith('tick'))}")

# the balancer table once every replica has joined
t, table, _, _ = max(sim.snapshots, key=lambda s: s[1].count("->"))
print(f"\nat {t / 1000:.0f}s")
print(table)

report = result.report
for key in ("max_replicas_reached", "time_to_max_s", "total_denials", "settle_time_s", "audits"):
    print(f"{key:22s} {report[key]}")
