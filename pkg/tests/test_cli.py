import json

import pytest

from gridcascade.cli import main
from gridcascade.netgen import vee
from gridcascade.netmodel import network_to_json


@pytest.fixture
def vee_case(tmp_path):
    path = tmp_path / "vee.json"
    path.write_text(network_to_json(vee()))
    return str(path)


def test_partition_command(capsys, vee_case):
    assert main(["partition", vee_case]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["regions"] == [[1, 2, 3]]
    assert doc["bridges"] == []


def test_partition_bundled_case_with_switch_off(capsys):
    assert main(["partition", "ieee118", "--switch-off", "15-33,19-34,23-24"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["areas_form_tree"] is True


def test_cascade_command_trace_out(capsys, vee_case, tmp_path):
    out = tmp_path / "trace.json"
    rc = main([
        "cascade", "--case", vee_case, "--fail", "1-2",
        "--controller", "droop", "--dispatch", "base",
        "--trace-out", str(out),
    ])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["stages"] == 2
    assert summary["successive_failures"] is True
    trace = json.loads(out.read_text())
    assert trace["stages"][0]["tripped_pairs"] == [[1, 2]]


def test_scan_command_writes_reports(capsys, vee_case, tmp_path):
    out_dir = tmp_path / "out"
    rc = main([
        "scan", "--case", vee_case, "--controller", "droop",
        "--profiles", "2", "--seed", "3", "--perturb", "0.1",
        "--out", str(out_dir),
    ])
    assert rc == 0
    agg = json.loads(capsys.readouterr().out)
    assert agg["profiles"] == 2 and agg["cells"] == 6
    files = {p.name for p in out_dir.iterdir()}
    assert "droop_a1_g1_cells.csv" in files
    assert "droop_a1_g1_aggregate.json" in files


def test_verify_fast(capsys):
    rc = main(["verify", "--fast"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("[PASS]") == 8
