import json

import numpy as np
import pytest

from goddard import cli
from goddard.errors import ConfigError, SchemaMismatch


def write_config(path, **over):
    path.write_text(json.dumps(over))
    return path


def test_document_round_trip_is_byte_identical(full_run):
    text = full_run.path.read_text()
    assert cli.dumps(cli.load_document(full_run.path)) == text


def test_malformed_config_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "pipeline": "Direct",\n  "model": {,}\n}')
    assert cli.main(["solve", str(bad), "--out", str(tmp_path / "o"), "-q"]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "column" in err


def test_unknown_key_and_bad_pipeline(tmp_path):
    with pytest.raises(ConfigError):
        cli.config_from_dict({"modle": {}})
    with pytest.raises(ConfigError):
        cli.config_from_dict({"pipeline": "Nope"})
    with pytest.raises(ConfigError):
        cli.config_from_dict({"boundary": {"r0": [1.0, 0.0]}})


def test_compare_without_inputs(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", pipeline="Compare", inputs={"direct": "direct.json"})
    assert cli.main(["solve", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == 2
    err = capsys.readouterr().err
    assert "indirect" in err and "onoff" in err and "direct (" in err


def test_unequal_traces_rejected(tmp_path):
    doc = {"schema_version": cli.SCHEMA_VERSION, "kind": "direct", "traces": {"t": [0, 1], "m": [1]}}
    p = tmp_path / "d.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaMismatch):
        cli.load_document(p)
    with pytest.raises(SchemaMismatch):
        cli.validate_document({"schema_version": 99, "kind": "direct", "traces": {}})


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "x.json"
    cli.atomic_write(target, "a")
    cli.atomic_write(target, "b")
    assert target.read_text() == "b"
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]


def test_plots_from_solution(full_run, tmp_path):
    tr = full_run.doc["traces"]
    n = len(tr["t"])
    for kind in ("state", "control", "switching", "path"):
        assert cli.emit_plots(full_run.path, kind, tmp_path)
    rows = (tmp_path / "state.csv").read_text().strip().splitlines()
    assert len(rows) == n + 1
    assert (tmp_path / "control.svg").read_text().count("<polyline") == 4
    assert (tmp_path / "path_main.csv").exists() and (tmp_path / "path_atmosphere.csv").exists()
    with pytest.raises(SchemaMismatch):
        cli.emit_plots(full_run.path, "compare", tmp_path)


def test_switching_function_vanishes_at_switching_times(full_run):
    tr = full_run.doc["traces"]
    t = np.asarray(tr["t"], float)
    psi = np.asarray(tr["psi"], float)
    scale = np.abs(psi).max()
    for ts in full_run.doc["switching_times"]:
        near = np.abs(t - ts) <= 1e-3
        assert near.any()
        assert np.abs(psi[near]).min() <= 1e-6 * scale
    t1, t2 = full_run.doc["switching_times"]
    assert np.all(psi[t < t1 - 1e-3] > 0)
    assert np.all(psi[t > t2 + 1e-3] < 0)


def test_shoot_only_reproduces_objective(full_run, tmp_path):
    cfg = write_config(tmp_path / "s.json", pipeline="IndirectShootOnly",
                       shoot_start={"z": list(map(float, full_run.doc["unknowns"]))})
    assert cli.run(cfg, tmp_path / "o") == 0
    doc = cli.load_document(tmp_path / "o" / "solution.json")
    assert doc["objective"] == pytest.approx(full_run.doc["objective"], abs=1e-10)
    assert doc["t_f"] == pytest.approx(full_run.doc["t_f"], abs=1e-10)


def test_direct_onoff_compare_pipelines(full_run, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["solve", "reference", "--pipeline", "Direct", "--out", str(out), "-q", "--emit-plots"]) == 0
    assert cli.main(["solve", "reference", "--pipeline", "OnOff", "--out", str(out), "-q"]) == 0
    cfg = write_config(tmp_path / "c.json", pipeline="Compare",
                       inputs={"indirect": str(full_run.path), "direct": "o/direct.json", "onoff": "o/onoff.json"})
    assert cli.main(["solve", str(cfg), "--out", str(out), "-q", "--emit-plots"]) == 0
    doc = cli.load_document(out / "compare.json")
    assert doc["objectives"]["indirect"] == pytest.approx(full_run.doc["objective"])
    assert 0 < doc["relative_loss_onoff"] < 0.05
    assert (out / "compare.svg").read_text().count("<polyline") == 3
    assert (out / "state.csv").exists() and (out / "control.svg").exists()
    assert "on-off loss" in capsys.readouterr().out


def test_plots_subcommand_errors(tmp_path, capsys):
    assert cli.main(["plots", str(tmp_path / "missing.json"), "--kind", "state"]) == 2
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert cli.main(["plots", str(p), "--kind", "state"]) == 1
    assert "malformed JSON" in capsys.readouterr().err
