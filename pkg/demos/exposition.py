"""
Pod metrics on the wire
=======================
"""
from scalepool.metrics import CustomMetricsAdapter, ScrapeTarget, encode_exposition, parse_exposition, scrape
from scalepool.sinkpool import PodInstance, PodPhase, admit_stream, pod_samples, release_stream, transition

pod = PodInstance("vsp-demo", capacity=2, created_at=0)
transition(pod, PodPhase.RUNNING, 0)
for sid in "abc":
    print(sid, admit_stream(pod, sid).value)     # the third is denied but still counted
release_stream(pod, "a")

text = encode_exposition(pod_samples(pod, 1000))
print(text)
print(parse_exposition(text))

# the adapter turns the request counter into a per-second rate over a window
adapter = CustomMetricsAdapter(window_ms=30_000)
for now in (0, 15_000, 30_000):
    for i in range(15):
        admit_stream(pod, f"x{now}-{i}")
    adapter.observe(scrape([ScrapeTarget(pod.id, lambda: encode_exposition(pod_samples(pod)))], now))
print(adapter.metric_samples("vsp_http_request_rate", [], 30_000))
