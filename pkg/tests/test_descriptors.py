import copy
import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from scalepool.descriptors import (
    CompileError, DescriptorError, SchemaError, ValidationError, compile_plan, load_descriptor,
    parse_nsd, parse_vnfd,
)

GOLDEN = Path(__file__).resolve().parent.parent / "scenarios" / "descriptors"
VNFD = json.loads((GOLDEN / "vsp.vnfd.json").read_text())
NSD = json.loads((GOLDEN / "ugc.nsd.json").read_text())


def vnfd(**changes):
    doc = copy.deepcopy(VNFD)
    for dotted, value in changes.items():
        *head, last = dotted.split("__")
        node = doc
        for k in head:
            node = node[k]
        if value is ...:
            del node[last]
        else:
            node[last] = value
    return json.dumps(doc)


def golden_plan():
    v = parse_vnfd((GOLDEN / "vsp.vnfd.json").read_bytes())
    return compile_plan(parse_nsd((GOLDEN / "ugc.nsd.json").read_bytes(), [v]), [v])


def test_golden_vnfd():
    v = parse_vnfd(json.dumps(VNFD))
    assert (v.id, v.name, v.vdu.capacity, v.vdu.startup_delay) == ("vsp-vnf", "vsp", 20, 2.0)
    assert v.scaling.threshold == 1000
    assert (v.scaling.min_replicas, v.scaling.max_replicas) == (1, 10)


def test_golden_plan():
    plan = golden_plan()
    (dep,) = plan.deployments
    assert (dep.name, dep.capacity, dep.startup_delay_ms, dep.replicas) == ("vsp", 20, 2000, 1)
    hpa = plan.hpa
    assert (hpa.target_deployment, hpa.min_replicas, hpa.max_replicas, hpa.target_average) == \
        ("vsp", 1, 10, 1000)
    assert hpa.metric_name == "vsp_http_request_rate"
    vs = plan.virtual_service
    assert (vs.listen_addr, vs.scheduler, vs.deployment) == ("192.168.39.55:30000", "rr", "vsp")


@pytest.mark.parametrize("threshold, millis", [("942m", 942), (2, 2000), ("1", 1000)])
def test_threshold_forms(threshold, millis):
    assert parse_vnfd(vnfd(scaling__threshold=threshold)).scaling.threshold == millis


@pytest.mark.parametrize("changes, kind, path", [
    ({"scaling__min_replicas": 5, "scaling__max_replicas": 2}, ValidationError, "$.scaling.min_replicas"),
    ({"scaling__threshold": "0"}, ValidationError, "$.scaling.threshold"),
    ({"scaling__min_replicas": 0}, ValidationError, "$.scaling.min_replicas"),
    ({"scaling__metric_name": "cpu"}, ValidationError, "$.scaling.metric_name"),
    ({"vdu__capacity": 0}, ValidationError, "$.vdu.capacity"),
    ({"vdu__startup_delay": -1}, ValidationError, "$.vdu.startup_delay"),
    ({"vdu__startup_delay": 10**400}, ValidationError, "$.vdu.startup_delay"),
    ({"name": ...}, SchemaError, "$.name"),
    ({"vdu__capacity": ...}, SchemaError, "$.vdu.capacity"),
    ({"vdu__capacity": "20"}, SchemaError, "$.vdu.capacity"),
    ({"scaling__threshold": "1.5"}, SchemaError, "$.scaling.threshold"),
    ({"scaling__threshold": True}, SchemaError, "$.scaling.threshold"),
    ({"connection_points": ["a", 3]}, SchemaError, "$.connection_points[1]"),
])
def test_vnfd_errors_name_the_path(changes, kind, path):
    with pytest.raises(kind) as info:
        parse_vnfd(vnfd(**changes))
    assert info.value.path == path
    assert info.value.to_dict()["path"] == path


def test_not_json():
    with pytest.raises(SchemaError) as info:
        parse_vnfd(b"\xff\xfe")
    assert info.value.to_dict() == {"error": "schema", "path": "$", "message": info.value.message}
    with pytest.raises(SchemaError):
        parse_vnfd("{")
    with pytest.raises(SchemaError):
        parse_vnfd("[]")


def test_nsd_cases():
    v = parse_vnfd(json.dumps(VNFD))
    assert parse_nsd(json.dumps(NSD), [v]).virtual_links[0].endpoints[0].connection_point == "ugc-ingress"
    standalone = dict(NSD, virtual_links=[])
    assert parse_nsd(json.dumps(standalone)).virtual_links == []
    bad = copy.deepcopy(NSD)
    bad["virtual_links"][0]["endpoints"][0]["vnf_id"] = "ghost"
    with pytest.raises(ValidationError) as info:
        parse_nsd(json.dumps(bad))
    assert info.value.path == "$.virtual_links[0].endpoints[0].vnf_id"
    bad_cp = copy.deepcopy(NSD)
    bad_cp["virtual_links"][0]["endpoints"][0]["connection_point"] = "nope"
    with pytest.raises(ValidationError):
        parse_nsd(json.dumps(bad_cp), [v])
    with pytest.raises(ValidationError):
        parse_nsd(json.dumps(dict(NSD, virtual_service={"listen_addr": "x", "scheduler": "rr"})))


def test_nsd_defaults_virtual_service():
    doc = {k: v for k, v in NSD.items() if k != "virtual_service"}
    nsd = parse_nsd(json.dumps(doc))
    assert (nsd.listen_addr, nsd.scheduler) == ("192.168.39.55:30000", "rr")


def test_compile_errors():
    v = parse_vnfd(json.dumps(VNFD))
    nsd = parse_nsd(json.dumps(NSD))
    twin = parse_vnfd(vnfd(id="vsp-twin"))
    two = parse_nsd(json.dumps(dict(NSD, vnf_refs=["vsp-vnf", "vsp-twin"])))
    with pytest.raises(CompileError):
        compile_plan(two, [v, twin])
    dangling = parse_nsd(json.dumps(dict(NSD, vnf_refs=["vsp-vnf", "ghost"])))
    with pytest.raises(CompileError) as info:
        compile_plan(dangling, [v])
    assert info.value.path == "$.vnf_refs[1]"
    with pytest.raises(CompileError):
        compile_plan(nsd, [v, v])


def test_vnfd_without_scaling_gets_one_replica_and_no_hpa():
    v = parse_vnfd(vnfd(scaling=...))
    plan = compile_plan(parse_nsd(json.dumps(NSD)), [v])
    assert plan.deployments[0].replicas == 1 and plan.hpa is None and plan.hpas == []


def test_compile_is_pure():
    assert golden_plan() == golden_plan()
    v = parse_vnfd(json.dumps(VNFD))
    before = copy.deepcopy(v)
    compile_plan(parse_nsd(json.dumps(NSD)), [v], sync_period_ms=5000)
    assert v == before


def test_round_trip():
    v = parse_vnfd(json.dumps(VNFD))
    assert parse_vnfd(json.dumps(v.to_dict())) == v
    n = parse_nsd(json.dumps(NSD))
    assert parse_nsd(json.dumps(n.to_dict())) == n


def test_load_descriptor(tmp_path):
    assert load_descriptor(str(GOLDEN / "vsp.vnfd.json")).id == "vsp-vnf"
    assert load_descriptor(str(GOLDEN / "ugc.nsd.json")).id == "ugc-tenant-ns"
    p = tmp_path / "service.json"
    p.write_text(json.dumps(NSD))
    assert load_descriptor(str(p)).vnf_refs == ["vsp-vnf"]


def _total(fn, data):
    try:
        fn(data)
    except DescriptorError as exc:
        d = exc.to_dict()
        assert d["path"].startswith("$") and d["error"] in ("schema", "validation")


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_parse_total_on_bytes(data):
    _total(parse_vnfd, data)
    _total(parse_nsd, data)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats() | st.text(max_size=6),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=6), kids, max_size=4),
    max_leaves=12)


def _mutations(base):
    paths = []

    def walk(node, trail):
        if isinstance(node, dict):
            for k, v in node.items():
                paths.append(trail + [k])
                walk(v, trail + [k])
        elif isinstance(node, list):
            for i, v in enumerate(node):
                paths.append(trail + [i])
                walk(v, trail + [i])
    walk(base, [])
    return paths


@settings(max_examples=500)
@given(st.data())
def test_parse_total_on_mutated_documents(data):
    for base, fn in ((VNFD, parse_vnfd), (NSD, parse_nsd)):
        doc = copy.deepcopy(base)
        trail = data.draw(st.sampled_from(_mutations(base)))
        node = doc
        for k in trail[:-1]:
            node = node[k]
        if data.draw(st.booleans()):
            del node[trail[-1]]
        else:
            node[trail[-1]] = data.draw(json_values)
        _total(fn, json.dumps(doc))
