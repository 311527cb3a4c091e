import csv
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from liouvlab import cli


def _write(tmp_path, data, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data, indent=2))
    return p


def test_defaults_are_reference():
    rs = cli.runspec_from_dict({})
    assert rs.problem.chi == pytest.approx(-0.5)
    assert rs.problem.sigma_arcs == (1.0, 1.0)
    assert rs.tasks == list(cli.TASKS)
    assert rs.mesh == {"h": 0.05, "depth": 12}


@pytest.mark.parametrize("tasks, expect", [
    (["ward"], ["solve", "accessory", "ward"]),
    (["l2", "action"], ["solve", "action", "accessory", "l2"]),
    (["mc"], ["mc"]),
])
def test_expand_tasks(tasks, expect):
    assert cli.expand_tasks(tasks) == expect


def test_errors_are_line_anchored(tmp_path):
    text = '{\n  "mesh": {"h": 0.05},\n  "problme": {}\n}\n'
    p = tmp_path / "bad.json"
    p.write_text(text)
    with pytest.raises(cli.RunSpecError) as exc:
        cli.parse_runspec(p)
    assert exc.value.errors == ["line 3: unknown key 'problme'"]


def test_json_syntax_error_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "mesh": {"h": 0.05,}\n}')
    with pytest.raises(cli.RunSpecError, match="line 2"):
        cli.parse_runspec(p)


def test_all_errors_reported():
    data = {"problem": {"punctures": [{"kind": "bulk", "x": [0, 1], "weight": -0.2}],
                        "Lambda": -1},
            "mesh": {"h": 2.0}, "mc": {"gamma": [1.5]}}
    with pytest.raises(cli.RunSpecError) as exc:
        cli.runspec_from_dict(data)
    msg = "\n".join(exc.value.errors)
    for frag in ("Euler characteristic", "Lambda", "mesh h", "gamma"):
        assert frag in msg


@settings(max_examples=30)
@given(hst.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_unknown_top_keys_rejected(key):
    if key in cli.TOP_KEYS:
        return
    with pytest.raises(cli.RunSpecError):
        cli.runspec_from_dict({key: 1})


@settings(max_examples=30)
@given(hst.floats(0.01, 0.5), hst.integers(0, 20), hst.lists(hst.sampled_from(cli.TASKS), max_size=4))
def test_valid_specs_parse(h, depth, tasks):
    rs = cli.runspec_from_dict({"mesh": {"h": h, "depth": depth}, "tasks": tasks})
    assert set(tasks) <= set(rs.tasks)
    assert rs.mesh["h"] == h


def test_check_command(tmp_path, capsys):
    p = _write(tmp_path, {"tasks": ["solve"]})
    assert cli.main(["check", "--spec", str(p)]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_invalid_spec_exit_code(tmp_path, capsys):
    p = _write(tmp_path, {"problem": {"Lambda": 0}})
    assert cli.main(["solve", "--spec", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_INVALID
    assert "Lambda" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [["--seed", "-1"], ["--gamma", "0.5,1.2"], ["--samples", "1"],
                                   ["--gamma", "a,b"]])
def test_bad_overrides(tmp_path, flags):
    assert cli.main(["mc", "--out", str(tmp_path), *flags]) == cli.EXIT_INVALID


def test_solve_outputs(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["solve", "--h", "0.15", "--depth", "5", "--out", str(out)])
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["tasks"] == ["solve"]
    assert abs(rep["results"]["solve"]["gauss_bonnet_defect"]) < 1e-6
    with open(out / "solver.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["csv_version"] == str(cli.CSV_VERSION)
    for col in ("h", "depth", "tol", "seed", "quadrature_error", "ndof", "gauss_bonnet_defect"):
        assert col in rows[0]
    assert (out / "metric_contours.svg").read_text().startswith("<svg")
    assert (out / "boundary_trace.svg").exists()


def test_mc_outputs_record_seed(tmp_path):
    out = tmp_path / "mc"
    code = cli.main(["mc", "--samples", "500", "--gamma", "0.3,0.1", "--seed", "77", "--out", str(out)])
    assert code == cli.EXIT_OK
    with open(out / "mc.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["gamma"]) for r in rows] == [0.3, 0.1]
    assert all(r["seed"] == "77" and r["N"] == "500" for r in rows)
    rep = json.loads((out / "report.json").read_text())
    assert rep["context"]["seed"] == 77


def test_solver_failure_exit_code(tmp_path):
    p = _write(tmp_path, {"mesh": {"h": 0.2, "depth": 4}, "solver": {"tol": 1e-15, "max_iter": 1},
                          "tasks": ["ward"], "output": {"formats": ["json"]}})
    code = cli.main(["report", "--spec", str(p), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_NUMERICAL
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["errors"]["accessory"].startswith("skipped")


def test_partial_completion(monkeypatch):
    from liouvlab import descendants as dsc

    def boom(*a, **k):
        raise RuntimeError("probe failure")

    monkeypatch.setattr(dsc, "global_ward_residuals", boom)
    rs = cli.runspec_from_dict({"mesh": {"h": 0.2, "depth": 4}, "tasks": ["ward", "action"]})
    report, code = cli.run(rs)
    assert code == cli.EXIT_PARTIAL
    assert "probe failure" in report["errors"]["ward"]
    assert "action" in report["results"]


def test_default_probes_avoid_punctures():
    rs = cli.runspec_from_dict({})
    bulk, bnd = cli._default_probes(rs.problem)
    assert len(bulk) >= 3
    assert list(bnd) == [-1.0, 0.5, 2.0]
