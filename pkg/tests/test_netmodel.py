import numpy as np
import pytest

from gridcascade.netmodel import (
    Bus,
    CaseFormatError,
    Line,
    Network,
    network_to_json,
    parse_case,
    perturb_loads,
    scale_capacities,
)

TRI_JSON = """
{
  "base_mva": 100.0,
  "buses": [
    {"id": 1, "kind": "generator", "demand": 1.0, "d_min": -1, "d_max": 1, "droop_K": 1.0},
    {"id": 2, "kind": "load", "demand": -1.0},
    {"id": 3, "kind": "load", "demand": 0.0}
  ],
  "lines": [
    {"id": 1, "from": 1, "to": 2, "susceptance": 1.0, "capacity": 10.0},
    {"id": 2, "from": 2, "to": 3, "susceptance": 1.0, "capacity": 10.0},
    {"id": 3, "from": 1, "to": 3, "susceptance": 1.0, "capacity": 10.0}
  ],
  "areas": [[1, 2, 3]]
}
"""

MATPOWER_MIN = """function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1.0 0 138 1 1.06 0.94;
2 1 50 10 0 0 1 1.0 0 138 1 1.06 0.94;
3 1 30 5 0 0 1 1.0 0 138 1 1.06 0.94;
];
mpc.gen = [
1 80 0 50 -50 1.0 100 1 120 0;
];
mpc.branch = [
1 2 0.01 0.05 0 150 0 0 0 0 1 -360 360;
2 3 0.01 0.04 0 100 0 0 0 0 1 -360 360;
1 3 0.01 0.08 0 100 0 0 0 0 1 -360 360;
];
"""


def test_native_round_trip():
    net = parse_case(TRI_JSON, "native-json")
    assert net.n_buses == 3 and net.n_lines == 3
    again = parse_case(network_to_json(net), "native-json")
    assert again == net


def test_native_parse_error_reports_location():
    with pytest.raises(CaseFormatError, match="line"):
        parse_case("{ not json", "native-json")


def test_matpower_units_and_shapes():
    net = parse_case(MATPOWER_MIN, "matpower-m")
    assert net.n_buses == 3 and net.n_lines == 3
    line = net.line_by_pair(1, 2)
    assert line.capacity == pytest.approx(1.5)  # 150 MW on a 100 MVA base
    assert line.susceptance == pytest.approx(1.0 / 0.05)
    gen = next(b for b in net.buses if b.id == 1)
    assert gen.kind == "generator"
    assert gen.demand == pytest.approx(0.8)  # 80 MW, no local load
    assert gen.d_max == pytest.approx(0.8)  # can back off to Pmin=0
    assert gen.d_min == pytest.approx(-0.4)  # 40 MW of headroom to Pmax
    load = next(b for b in net.buses if b.id == 2)
    assert load.demand == pytest.approx(-0.5)
    assert load.local_load == pytest.approx(0.5)


def test_matpower_out_of_service_branch_dropped():
    text = MATPOWER_MIN.replace(
        "1 3 0.01 0.08 0 100 0 0 0 0 1 -360 360;",
        "1 3 0.01 0.08 0 100 0 0 0 0 0 -360 360;",
    )
    net = parse_case(text, "matpower-m")
    assert net.n_lines == 2


def test_matpower_parallel_branches_merged():
    text = MATPOWER_MIN.replace(
        "1 3 0.01 0.08 0 100 0 0 0 0 1 -360 360;",
        "1 3 0.01 0.08 0 100 0 0 0 0 1 -360 360;\n3 1 0.01 0.08 0 100 0 0 0 0 1 -360 360;",
    )
    with pytest.warns(UserWarning, match="parallel"):
        net = parse_case(text, "matpower-m")
    assert net.n_lines == 3
    merged = net.line_by_pair(1, 3)
    assert merged.susceptance == pytest.approx(2.0 / 0.08)
    assert merged.capacity == pytest.approx(2.0)


def test_matpower_disconnected_rejected():
    text = MATPOWER_MIN.replace(
        "2 3 0.01 0.04 0 100 0 0 0 0 1 -360 360;\n1 3 0.01 0.08 0 100 0 0 0 0 1 -360 360;",
        "",
    )
    with pytest.raises(CaseFormatError, match="disconnected"):
        parse_case(text, "matpower-m")


def test_perturb_loads_zero_magnitude_identity(tri):
    base = tri.base_injections()
    assert np.array_equal(perturb_loads(tri, base, 0.0, seed=1), base)


def test_perturb_loads_deterministic_and_bounded(tri):
    base = tri.base_injections()
    a = perturb_loads(tri, base, 0.25, seed=42)
    b = perturb_loads(tri, base, 0.25, seed=42)
    assert np.array_equal(a, b)
    c = perturb_loads(tri, base, 0.25, seed=43)
    assert not np.array_equal(a, c)
    loads = [i for i, bus in enumerate(tri.buses) if bus.kind == "load"]
    for i in loads:
        if base[i] != 0:
            assert abs(a[i] / base[i] - 1.0) <= 0.25


def test_perturb_loads_keeps_generators(tri):
    base = tri.base_injections()
    out = perturb_loads(tri, base, 0.25, seed=7)
    gens = [i for i, bus in enumerate(tri.buses) if bus.kind == "generator"]
    assert np.array_equal(out[gens], base[gens])


def test_scale_capacities_identity(tri):
    assert scale_capacities(tri, 1.0, 1.0) == tri


def test_scale_capacities_values(tri):
    scaled = scale_capacities(tri, 0.7, 0.65)
    assert scaled.lines[0].capacity == pytest.approx(7.0)
    gen = scaled.buses[0]
    assert gen.d_max == pytest.approx(0.65)
    assert gen.d_min == pytest.approx(-0.65)
    # 0.7 of capacity 1.5 -> 1.05 per the stated semantics
    one = Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=1.5)
    assert one.capacity * 0.7 == pytest.approx(1.05)


def test_scale_capacities_multiplicative(tri):
    a_then_b = scale_capacities(scale_capacities(tri, 0.9, 0.8), 0.8, 0.9)
    combined = scale_capacities(tri, 0.72, 0.72)
    for x, y in zip(a_then_b.lines, combined.lines):
        assert x.capacity == pytest.approx(y.capacity, abs=1e-12)
    for x, y in zip(a_then_b.buses, combined.buses):
        assert x.d_max == pytest.approx(y.d_max, abs=1e-12)
        assert x.d_min == pytest.approx(y.d_min, abs=1e-12)


def test_invariants_rejected():
    with pytest.raises(CaseFormatError):
        Bus(id=1, kind="load", demand=0.0, d_min=0.5)  # box must contain 0
    with pytest.raises(CaseFormatError):
        Line(id=1, from_bus=1, to_bus=1, susceptance=1.0, capacity=1.0)
    with pytest.raises(CaseFormatError):
        Line(id=1, from_bus=1, to_bus=2, susceptance=-1.0, capacity=1.0)
    buses = (Bus(id=1, kind="load", demand=0.0), Bus(id=2, kind="load", demand=0.0))
    lines = (
        Line(id=1, from_bus=1, to_bus=2, susceptance=1.0, capacity=1.0),
        Line(id=2, from_bus=2, to_bus=1, susceptance=1.0, capacity=1.0),
    )
    with pytest.raises(CaseFormatError, match="parallel"):
        Network(base_mva=100.0, buses=buses, lines=lines, areas=(frozenset({1, 2}),))
