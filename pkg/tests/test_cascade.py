import numpy as np
import pytest

from gridcascade.cascade import CascadeConfig, run_cascade
from gridcascade.netmodel import Scenario
from gridcascade.netgen import bowtie, secure_scenario, triangle, vee
from gridcascade.powerflow import dc_power_flow


def test_vee_droop_hand_trace():
    """Losing (1,2) overloads (1,3) at 2.0 > 1.5; the island then settles."""
    net = vee()
    sc = secure_scenario(net)
    line_12 = net.line_by_pair(1, 2)
    trace = run_cascade(sc, {line_12.id}, controller="droop")
    assert trace.final_status == "contained"
    assert trace.n_stages == 2
    s1 = trace.stages[0]
    line_13 = net.line_by_pair(1, 3)
    assert s1.flows_abs[line_13.id] == pytest.approx(2.0, abs=1e-9)
    assert s1.new_failures == frozenset({line_13.id})
    s2 = trace.stages[1]
    assert s2.tripped == frozenset({line_12.id, line_13.id})
    assert s2.new_failures == frozenset()
    # bus 1 absorbs its stranded output; bus 2 serves the load island
    assert trace.total_shed == pytest.approx(0.0, abs=1e-9)
    line_23 = net.line_by_pair(2, 3)
    assert s2.flows_abs[line_23.id] == pytest.approx(2.0, abs=1e-9)


def test_zero_flow_failure_uc_single_stage():
    net = triangle()
    sc = Scenario(network=net, injections=np.zeros(3))
    trace = run_cascade(sc, {net.lines[0].id}, controller="uc")
    assert trace.n_stages == 1
    assert trace.final_status == "contained"
    assert np.abs(trace.cumulative_d).max() == 0.0


def test_bowtie_uc_localized():
    net = bowtie()
    sc = secure_scenario(net)
    line = net.line_by_pair(1, 2)
    trace = run_cascade(sc, {line.id}, controller="uc")
    assert trace.n_stages == 1 and trace.final_status == "contained"
    s1 = trace.stages[0]
    assert not s1.critical
    idx = net.bus_index()
    other = [idx[b] for b in (4, 5, 6)]
    assert np.abs(s1.equilibrium.d[other]).max() <= 1e-9
    bridge = net.line_by_pair(3, 4)
    base = dc_power_flow(net, sc.injections).flow_by_id()
    assert s1.flows_abs[bridge.id] == pytest.approx(base[bridge.id], abs=1e-9)


def test_monotone_tripped_sets_and_determinism():
    net = vee()
    sc = secure_scenario(net)
    line = net.line_by_pair(1, 2)
    t1 = run_cascade(sc, {line.id}, controller="droop")
    t2 = run_cascade(sc, {line.id}, controller="droop")
    for a, b in zip(t1.stages, t2.stages):
        assert a.tripped == b.tripped
        assert a.new_failures == b.new_failures
        assert np.array_equal(a.equilibrium.d, b.equilibrium.d)
    prev = frozenset()
    for s in t1.stages:
        assert prev < s.tripped or (prev == frozenset() and s.tripped)
        prev = s.tripped
    assert t1.stages[-1].new_failures == frozenset()


def test_uc_never_cascades_further():
    """Post-controller flows respect ratings, so each UC stage is final."""
    net = vee()
    sc = secure_scenario(net)
    for line in net.lines:
        trace = run_cascade(sc, {line.id}, controller="uc")
        assert trace.final_status == "contained"
        for s in trace.stages:
            assert s.new_failures == frozenset()


def test_multi_line_initial_failure():
    net = bowtie()
    sc = secure_scenario(net)
    ids = {net.line_by_pair(1, 2).id, net.line_by_pair(4, 5).id}
    trace = run_cascade(sc, ids, controller="uc")
    assert trace.stages[0].tripped == frozenset(ids)
    assert trace.final_status == "contained"


def test_insecure_scenario_rejected():
    net = vee()
    bad = Scenario(network=net, injections=np.array([3.0, 0.0, -3.0]))
    with pytest.raises(ValueError, match="secure"):
        run_cascade(bad, {net.lines[0].id}, controller="droop")


def test_unknown_failure_rejected():
    net = vee()
    sc = secure_scenario(net)
    with pytest.raises(ValueError):
        run_cascade(sc, {99}, controller="droop")
    with pytest.raises(ValueError):
        run_cascade(sc, set(), controller="droop")


def test_trace_json_round_trip(tmp_path):
    import json

    net = vee()
    sc = secure_scenario(net)
    trace = run_cascade(sc, {net.line_by_pair(1, 2).id}, controller="droop")
    doc = json.loads(trace.to_json(net))
    assert doc["controller"] == "droop"
    assert doc["final_status"] == "contained"
    assert len(doc["stages"]) == trace.n_stages
    assert doc["stages"][0]["tripped_pairs"] == [[1, 2]]


def test_dynamic_detection_critical_stage():
    """A stranded load is flagged critical through the dual trajectory."""
    from gridcascade.netmodel import Bus, Line, Network

    net = Network(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="generator", demand=1.0, d_min=-1, d_max=1, droop_K=1.0),
            Bus(id=2, kind="load", demand=-1.0),
        ),
        lines=(Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=10.0),),
        areas=(frozenset({1, 2}),),
    )
    sc = secure_scenario(net)
    trace = run_cascade(
        sc, {1}, config=CascadeConfig(controller="uc", detect="dynamic")
    )
    assert trace.stages[0].critical
    assert trace.total_shed == pytest.approx(1.0, abs=1e-6)


def test_dynamic_detection_matches_exact():
    """Both detection policies classify the same (non-critical) stage."""
    net = bowtie()
    sc = secure_scenario(net)
    bridge = net.line_by_pair(3, 4)
    exact = run_cascade(
        sc, {bridge.id}, config=CascadeConfig(controller="uc", detect="exact")
    )
    dynamic = run_cascade(
        sc, {bridge.id}, config=CascadeConfig(controller="uc", detect="dynamic")
    )
    assert exact.final_status == dynamic.final_status == "contained"
    assert [s.critical for s in exact.stages] == [s.critical for s in dynamic.stages]
    assert np.allclose(
        exact.stages[0].equilibrium.d, dynamic.stages[0].equilibrium.d, atol=1e-9
    )
