"""Command-line front end: exit codes, reports, configs and coverage."""

import csv
import importlib
import io
import json
from importlib import resources

import jsonschema
import pytest

from chronexp import cli

SCHEMA = json.loads(resources.files("chronexp").joinpath("schemas/report.schema.json").read_text())


def invoke(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def report(capsys, *argv):
    code, out, _ = invoke(capsys, *argv)
    doc = json.loads(out)
    jsonschema.validate(doc, SCHEMA)
    return code, doc


def test_solve_ode_separation_example(capsys):
    code, doc = report(capsys, "solve-ode", "--f", "u^2", "--c", "1", "--a", "0", "--t", "0.5")
    assert code == 0
    assert doc["results"]["value"] == pytest.approx(2.0, abs=1e-10)
    assert doc["schema_version"] == cli.SCHEMA_VERSION


def test_verify_full_suite(capsys):
    from chronexp.identities import CATALOG
    code, doc = report(capsys, "verify", "--suite", "all", "--seed", "42", "--tol", "1e-6",
                       "--trials", "3")
    assert code == 0 and doc["passed"]
    seen = {c["name"].split("(")[0] for c in doc["checks"]}
    assert seen == set(CATALOG)


def test_missing_config_is_usage_error(capsys, tmp_path):
    code, out, err = invoke(capsys, "solve-ode", "--config", str(tmp_path / "nope.toml"))
    assert code == 2 and out == "" and "does not exist" in err


def test_bad_flag_and_no_command(capsys):
    assert invoke(capsys, "solve-ode", "--bogus", "1")[0] == 2
    assert invoke(capsys)[0] == 2


def test_parse_error_is_usage_error(capsys):
    code, out, _ = invoke(capsys, "solve-ode", "--f", "u***2", "--c", "1", "--t", "0.5")
    assert code == 2 and out == ""


def test_runtime_failure_reports_escape_time(capsys):
    code, doc = report(capsys, "solve-ode", "--f", "u^2", "--c", "1", "--t", "2")
    assert code == 1 and not doc["passed"]
    assert doc["error"]["escape_time"] == pytest.approx(1.0, abs=1e-6)


def test_failed_check_exits_one(capsys):
    code, doc = report(capsys, "parabolic", "--k1", "1", "--n", "32", "--t", "0.5",
                       "--tol", "1e-30")
    assert code == 1 and not doc["passed"]


def test_nonpositive_tolerance_rejected(capsys):
    assert invoke(capsys, "solve-ode", "--f", "u", "--c", "1", "--tol", "0")[0] == 2


def test_negative_expression_needs_equals_form(capsys):
    code, doc = report(capsys, "solve-ode", "--f=-u", "--c", "1", "--t", "1")
    assert code == 0
    assert doc["results"]["value"] == pytest.approx(0.36787944117144233, rel=1e-10)


def test_explain(capsys):
    code, out, _ = invoke(capsys, "explain", "BCH_MERGE")
    assert code == 0 and "BCH_MERGE" in out
    again = invoke(capsys, "explain", "BCH_MERGE")[1]
    assert again == out
    code, out, _ = invoke(capsys, "explain", "TT", "--format", "json")
    assert code == 0 and json.loads(out)["id"] == "TT"
    assert invoke(capsys, "explain", "NOPE")[0] == 2


CONFIG = """
command = "solve-system"
seed = 7

[problem]
f = ["y", "-x"]
names = ["x", "y"]
c = [1.0, 0.0]
t = 1.5
"""


def test_config_run_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "osc.toml"
    cfg.write_text(CONFIG)
    code, doc = report(capsys, "run", str(cfg))
    assert code == 0
    code, doc2 = report(capsys, "solve-system", "--config", str(cfg), "--t", "0.5")
    assert code == 0 and float(doc2["inputs"]["t"]) == 0.5
    assert doc != doc2


def test_config_unknown_key_and_mismatch(capsys, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(CONFIG + "typo = 1\n")
    assert invoke(capsys, "run", str(bad))[0] == 2
    cfg = tmp_path / "osc.toml"
    cfg.write_text(CONFIG)
    assert invoke(capsys, "solve-ode", "--config", str(cfg))[0] == 2
    broken = tmp_path / "broken.toml"
    broken.write_text("command = [")
    assert invoke(capsys, "run", str(broken))[0] == 2


def test_byte_identical_reports_and_timing_sidecar(capsys, tmp_path):
    cfg = tmp_path / "verify.toml"
    cfg.write_text('command = "verify"\nseed = 3\n[problem]\nid = ["TT", "BCH_MERGE"]\ntrials = 4\n')
    outs = [tmp_path / "r1.json", tmp_path / "r2.json"]
    for o in outs:
        assert invoke(capsys, "run", str(cfg), "--out", str(o))[0] == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()
    timing = json.loads((tmp_path / "r1.json.timing.json").read_text())
    assert timing["wall_time_seconds"] >= 0
    jsonschema.validate(json.loads(outs[0].read_text()), SCHEMA)


def test_csv_rows(capsys):
    code, out, _ = invoke(capsys, "solve-system", "--f", "y", "--f=-x", "--names", "x",
                          "--names", "y", "--c", "[[1,0],[0,1]]", "--t", "0.3",
                          "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 2
    assert float(rows[0]["x"]) == pytest.approx(0.955336489125606, rel=1e-10)


def test_points_file(capsys, tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("0.5\n1.0\n2.0\n")
    code, doc = report(capsys, "solve-ode", "--f", "u", "--points", str(pts), "--t", "1")
    assert code == 0
    assert len(doc["results"]["values"]) == 3


SMOKE = [
    ("solve-nth", "--f=-u", "--n", "2", "--c", "1,0", "--t", "1"),
    ("first-integrals", "--f", "u^2", "--c", "1", "--t", "0.5", "--tau", "0.2"),
    ("lie-series", "--f", "u", "--c", "1", "--t", "0.2", "--order", "8"),
    ("gauge", "--f", "u^2", "--z", "u/(1-t*u)", "--c", "1", "--t", "0.5"),
    ("omega", "--f", "u^2", "--c", "0.5", "--t", "0.3", "--budget", "30"),
    ("conjugation", "--h", "x", "--names", "x", "--interval", "0 1", "--c", "0.5"),
    ("bernoulli", "--coef-a", "1", "--coef-b", "1", "--alpha", "2", "--c", "0.5", "--t", "0.5"),
    ("solve-pde", "--f", "1", "--v", "x^2", "--t", "1", "--rho", "0.3", "--residual-h", "0.02"),
    ("parabolic", "--k0", "0", "--k", "1", "--sigma", "1", "--t", "1"),
    ("helmholtz", "--eps", "1", "--alpha", "1", "--beta", "0", "--x", "1"),
    ("pde-system", "--A", '[["y*0.3","y"],["-0.5*y","0.2*y"]]',
     "--B", '[["x*0.3","x"],["-0.5*x","0.2*x"]]', "--c", "1,1", "--x", "0.5", "--y", "0.5"),
    ("consistency", "--A", "[[0,1],[0,0]]", "--B", "[[0,0],[1,0]]"),
    ("compatible-b", "--A", "[[0.1,0.5],[-0.3,0]]", "--B-at-a", "[[0,1],[2,-1]]",
     "--x", "0.5", "--y", "0"),
    ("texp", "--L", '[["0","1"],["-t","0"]]', "--t", "1"),
    ("texp", "--L", "[[0,1],[-1,0]]", "--t", "1", "--method", "dyson", "--order", "6"),
    ("inhomogeneous", "--L", "[[0,1],[-1,0]]", "--phi", "0", "--phi", "1", "--v", "1,0",
     "--t", "1"),
    ("sylvester", "--coef-a", "[[0,1],[0,0]]", "--coef-b", "[[1,0],[0,1]]",
     "--coef-c", "[[0,0],[1,0]]", "--K0", "[[1,0],[0,1]]", "--t", "0.5"),
    ("param-derivative", "--L", '[["0","s"],["-s*t","0"]]', "--param", "s", "--alpha0", "1",
     "--t", "1"),
    ("apply-operator", "--op",
     '{"kind": "compose", "factors": [{"kind": "mul", "expr": "x"}, {"kind": "d", "var": "x"}]}',
     "--g", "x^3", "--vars", "x"),
    ("shift", "--var", "x", "--displacement", "2", "--g", "x^2", "--vars", "x", "--at", "1"),
    ("shift-conjugation", "--alpha", "1", "--beta", "2", "--displacement", "0.3"),
    ("pushforward", "--op", '{"kind": "d", "var": "x"}', "--F", "b1*b2", "--b", "x^2", "--b", "x+1",
     "--vars", "x", "--order", "6"),
    ("expr", "--expr", "sin(x)*x", "--diff", "x", "--at", '{"x": 0.5}'),
]


@pytest.mark.parametrize("argv", SMOKE, ids=[f"{a[0]}-{i}" for i, a in enumerate(SMOKE)])
def test_every_command_runs(capsys, argv):
    code, doc = report(capsys, *argv)
    assert code == 0, doc.get("error")
    if argv[0] == "consistency":
        assert not doc["results"]["consistency"]["consistent"]


def test_every_public_operation_reachable():
    modules = {"expr", "opalg", "texp", "identities", "characteristics", "pdesolve"}
    for key, command in cli.OPERATION_COVERAGE.items():
        module, op = key.split(".")
        assert command in cli.DISPATCH or command in ("run", "explain")
        if module in modules:
            assert hasattr(importlib.import_module(f"chronexp.{module}"), op), key
    exercised = {a[0] for a in SMOKE} | {"solve-ode", "solve-system", "verify"}
    assert exercised == set(cli.DISPATCH)
