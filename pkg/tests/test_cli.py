import json
import shutil

import pytest

from conftest import DATA, ROOT
from palletbench.cli import main
from palletbench.runner import strip_timing


def test_schema_check(capsys):
    assert main(["schema", "check", str(DATA / "valid.xml")]) == 0
    out = capsys.readouterr().out
    assert "1 layers" in out and "4 packages" in out


def test_schema_check_bad_xml(tmp_path, capsys):
    bad = tmp_path / "bad.xml"
    bad.write_text("<palletizing><pallet")
    assert main(["schema", "check", str(bad)]) == 1
    assert "palletbench:" in capsys.readouterr().err


def test_simulate_missing_file(tmp_path, capsys):
    assert main(["simulate", "--params", str(tmp_path / "nope.json")]) == 1
    assert "not found" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["simulate"]) == 1
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_simulate_writes_report(tmp_path, capsys):
    shutil.copy(DATA / "valid.xml", tmp_path)
    params = json.loads((DATA / "valid_params.json").read_text())
    params["max_duration"] = 4.0
    (tmp_path / "p.json").write_text(json.dumps(params))
    out = tmp_path / "out"
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--out", str(out),
                 "--export", "poses-ndjson"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["outcome"] in ("success", "failure", "inconclusive")
    assert rep["params"]["visual"]["lighting"] == "studio"
    assert "outcome:" in capsys.readouterr().out
    # re-classify the exported trace
    assert main(["validate", "--trace", str(out / "frames.ndjson")]) == 0
    again = json.loads(capsys.readouterr().out)
    assert again["outcome"] == rep["outcome"]
    assert again["measurements"] == rep["measurements"]
    assert again["violations"] == rep["violations"]


def test_validate_thresholds_file(tmp_path, capsys):
    shutil.copy(DATA / "valid.xml", tmp_path)
    params = json.loads((DATA / "valid_params.json").read_text())
    params["max_duration"] = 3.0
    (tmp_path / "p.json").write_text(json.dumps(params))
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--out", str(tmp_path),
                 "--export", "poses-ndjson"]) == 0
    capsys.readouterr()
    th = tmp_path / "th.json"
    th.write_text(json.dumps({"elastic_frac": 1e-9, "permanent_frac": 1e-10}))
    assert main(["validate", "--trace", str(tmp_path / "frames.ndjson"), "--thresholds", str(th)]) == 0
    assert json.loads(capsys.readouterr().out)["outcome"] in ("failure", "inconclusive")
    th.write_text(json.dumps({"bogus": 1}))
    assert main(["validate", "--trace", str(tmp_path / "frames.ndjson"), "--thresholds", str(th)]) == 1


def test_overlapping_schema_file_is_input_error(tmp_path, capsys):
    xml = (DATA / "valid.xml").read_text()
    assert 'x="200" y="-150"' in xml
    (tmp_path / "s.xml").write_text(xml.replace('x="200" y="-150"', 'x="190" y="-150"', 1))
    (tmp_path / "p.json").write_text(json.dumps({"schema_file": "s.xml"}))
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--out", str(tmp_path)]) == 1
    assert "overlap" in capsys.readouterr().err


@pytest.mark.parametrize("exc", ["integrity", "numeric"])
def test_engine_errors_exit_2(tmp_path, monkeypatch, exc):
    import palletbench.cli as cli
    from palletbench.errors import FatalNumeric, IntegrityFailure
    from palletbench.scene import IntegrityIssue, IntegrityReport

    def boom(*a, **k):
        if exc == "integrity":
            raise IntegrityFailure(IntegrityReport((IntegrityIssue("NonFiniteState", ("L00P00",)),)))
        raise FatalNumeric("body L00P00")

    monkeypatch.setattr(cli, "run_simulation", boom)
    shutil.copy(DATA / "valid.xml", tmp_path)
    (tmp_path / "p.json").write_text(json.dumps({"schema_file": "valid.xml"}))
    assert main(["simulate", "--params", str(tmp_path / "p.json"), "--out", str(tmp_path)]) == 2


def test_validate_missing_trace(tmp_path):
    assert main(["validate", "--trace", str(tmp_path / "none.ndjson")]) == 1


@pytest.mark.slow
def test_campaign_deterministic(tmp_path):
    args = ["campaign", "--schema", str(DATA / "six_layer.xml"),
            "--ranges", str(ROOT / "configs" / "campaign" / "ranges.json"),
            "--params", str(ROOT / "configs" / "campaign" / "base.json"),
            "--runs", "3", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--parallel", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert names == ["run_0000.json", "run_0001.json", "run_0002.json", "statistics.json"]
    for n in names:
        a = json.loads((tmp_path / "a" / n).read_text())
        b = json.loads((tmp_path / "b" / n).read_text())
        assert strip_timing(a) == strip_timing(b)
    rep = json.loads((tmp_path / "a" / "run_0000.json").read_text())
    assert rep["params"]["max_duration"] == 6.0


def test_campaign_bad_runs(tmp_path):
    assert main(["campaign", "--schema", str(DATA / "six_layer.xml"),
                 "--ranges", str(ROOT / "configs" / "campaign" / "ranges.json"),
                 "--runs", "0", "--seed", "1", "--out", str(tmp_path)]) == 1
