import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from filtrationlab.cli import ENV_TOL, main, resolve_tol
from filtrationlab.lattice import MARTINGALE_TOL

CORPUS = Path(__file__).resolve().parents[1] / "scenarios" / "worked_examples.json"


def write(tmp_path, doc, name="in.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def small(**expected):
    entry = {"id": "c", "kind": "cox", "params": {"T": 3}, "horizon": 3}
    if expected:
        entry["expected"] = expected
    return {"schema_version": 1, "scenarios": [entry]}


def tree(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "summary.csv"}


def test_empty_list_exits_zero(tmp_path, capsys):
    assert main(["--scenarios", write(tmp_path, {"schema_version": 1, "scenarios": []}),
                 "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "summary.csv")))
    assert rows == [["scenario_id", "verdict", "expected", "max_residual", "wall_ms"]]


def test_bundled_corpus_matches(tmp_path, capsys):
    assert main(["--scenarios", "@examples", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("[ok]") == 6
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert len(rows) == 6
    assert all(float(r["max_residual"]) <= MARTINGALE_TOL for r in rows)
    rep = json.loads((tmp_path / "mixture_ex41.json").read_text())
    assert rep["verdict_matched"] and rep["invariance"]["verdict"] == "invariant"
    assert "wall" not in json.dumps(rep)


def test_shipped_file_equals_bundled_copy():
    from importlib.resources import files
    bundled = files("filtrationlab").joinpath("data/worked_examples.json").read_text()
    assert json.loads(bundled) == json.loads(CORPUS.read_text())


def test_tampered_expectation_exits_one(tmp_path, capsys):
    doc = json.loads(CORPUS.read_text())
    doc["scenarios"][1]["expected"]["verdict"] = "invariant"
    assert main(["--scenarios", write(tmp_path, doc)]) == 1
    err = capsys.readouterr().err
    assert "fg_equal_inaccessible" in err
    assert "mixture_ex41" not in err


def test_pseudo_stopping_mismatch_exits_one(tmp_path, capsys):
    assert main(["--scenarios", write(tmp_path, small(verdict="invariant", pseudo_stopping=True))]) == 1
    assert "pseudo_stopping" in capsys.readouterr().err


def test_tight_tolerance_exits_one(tmp_path, capsys):
    # the tolerance drives both the verdict and the residual gate
    assert main(["--scenarios", write(tmp_path, small()), "--tol", "1e-30"]) == 1
    assert "mismatch: scenario c:" in capsys.readouterr().err


def test_malformed_json_reports_position(tmp_path, capsys):
    assert main(["--scenarios", write(tmp_path, '{"schema_version": 1,\n "scenarios": [}')]) == 2
    assert ":2:" in capsys.readouterr().err


@pytest.mark.parametrize("doc, field", [
    ({"schema_version": 1, "scenarios": [{"id": "a", "kind": "bogus", "params": {}, "horizon": 2}]},
     "scenarios[0].kind"),
    ({"schema_version": 2, "scenarios": []}, "schema_version"),
    ({"schema_version": 1, "scenarios": [{"id": "a", "params": {}}]}, "scenarios[0]"),
    ({"schema_version": 1, "scenarios": [{"id": "a", "kind": "cox", "params": {}, "extra": 1}]},
     "scenarios[0]"),
    ({"schema_version": 1, "scenarios": [{"id": "a", "kind": "cox", "params": {}, "horizon": 0}]},
     "scenarios[0].horizon"),
])
def test_schema_errors_name_the_field(tmp_path, capsys, doc, field):
    assert main(["--scenarios", write(tmp_path, doc)]) == 2
    assert field in capsys.readouterr().err


def test_duplicate_ids_and_missing_file(tmp_path, capsys):
    doc = small()
    doc["scenarios"].append(dict(doc["scenarios"][0]))
    assert main(["--scenarios", write(tmp_path, doc)]) == 2
    assert main(["--scenarios", str(tmp_path / "absent.json")]) == 2


def test_generator_parameter_error_exits_two(tmp_path, capsys):
    doc = {"schema_version": 1, "scenarios": [{"id": "deep", "kind": "cox", "params": {"T": 40},
                                               "horizon": 40}]}
    assert main(["--scenarios", write(tmp_path, doc)]) == 2
    assert "deep" in capsys.readouterr().err


def test_outputs_are_byte_identical_across_runs_and_jobs(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["--scenarios", str(CORPUS), "--out", str(a), "--seed", "4"]) == 0
    assert main(["--scenarios", str(CORPUS), "--out", str(b), "--seed", "4"]) == 0
    assert main(["--scenarios", str(CORPUS), "--out", str(c), "--seed", "4", "--jobs", "3"]) == 0
    assert tree(a) == tree(b) == tree(c)


def test_tolerance_override_order(monkeypatch):
    monkeypatch.delenv(ENV_TOL, raising=False)
    assert resolve_tol(None) == MARTINGALE_TOL
    monkeypatch.setenv(ENV_TOL, "1e-6")
    assert resolve_tol(None) == 1e-6
    assert resolve_tol(1e-3) == 1e-3


def test_env_tolerance_reaches_the_run(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(ENV_TOL, "1e-30")
    assert main(["--scenarios", write(tmp_path, small())]) == 1
    monkeypatch.setenv(ENV_TOL, "abc")
    assert main(["--scenarios", write(tmp_path, small())]) == 2


def test_csv_format(tmp_path):
    assert main(["--scenarios", write(tmp_path, small()), "--out", str(tmp_path / "o"),
                 "--format", "csv"]) == 0
    o = tmp_path / "o"
    head = next(csv.reader(open(o / "c.azema.csv")))
    assert head[:3] == ["t", "atom", "S"]
    assert next(csv.reader(open(o / "c.bsde.csv"))) == ["t", "atom", "Z", "U"]
    assert "azema" not in json.loads((o / "c.json").read_text())


def test_suite_selection(tmp_path):
    assert main(["--scenarios", write(tmp_path, small()), "--suite", "azema",
                 "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "c.json").read_text())
    assert "azema" in rep
    assert not rep.get("bsde")


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "filtrationlab", "--scenarios", "@examples"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert r.stdout.count("[ok]") == 6
