import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from thermalphi.cli import (ConfigError, emit, expand_suites, load_schema, main, merge_defaults,
                            parse_config_text)
from thermalphi.suites import ACCEPTANCE, Check, SuiteResult


def _report(path):
    return json.loads((path / "report.json").read_text())


def test_free_identities_suite(tmp_path):
    assert main(["--out", str(tmp_path), "run", "--suite", "free-identities", "--scale", "0.2"]) == 0
    rep = _report(tmp_path)
    names = [t["name"] for t in rep["tests"]]
    assert any(n.startswith("matsubara") for n in names)
    assert "fourier-roundtrip" in names
    assert any(n.startswith("moment") for n in names)
    jsonschema.validate(rep, load_schema("report.schema.json"))
    assert (tmp_path / rep["tables"]["matsubara"]).exists()


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--seed", "3", "--out", str(d), "run", "--suite", "free-identities",
                     "--scale", "0.1"]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "matsubara.csv").read_bytes() == (b / "matsubara.csv").read_bytes()


def test_malformed_json_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "seed": 1,\n}\n')
    assert main(["--out", str(tmp_path), "run", "--config", str(bad)]) == 2
    assert "bad.json:3:1" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"sede": 1},
    {"lattice": {"nt": 7}},
    {"lattice": {"nt": 8, "time_cutoff": 4}},
    {"mc": {"method": "gibbs"}},
    {"suites": ["nonsense"]},
])
def test_invalid_configs_exit_2(tmp_path, cfg):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["--out", str(tmp_path), "run", "--config", str(p)]) == 2


def test_config_parsing_and_defaults():
    cfg = parse_config_text('{"seed": 4, "lattice": {"nt": 8}}')
    merged = merge_defaults(cfg)
    assert merged["seed"] == 4 and merged["lattice"]["nt"] == 8 and merged["lattice"]["nx"] == 32
    with pytest.raises(ConfigError):
        parse_config_text("[1, 2")
    assert expand_suites(["full"]) == ACCEPTANCE
    assert expand_suites(["wick", "full"])[0] == "wick"


def test_empty_table_is_header_only(tmp_path):
    res = SuiteResult("empty", None, [Check("x", 0.0, 0.0, "abs_err", 0.0, 1.0, True)],
                      {"schwinger": (["t", "value", "stderr"], [])})
    rep = emit(tmp_path, "run", {}, 0, [res])
    rows = list(csv.reader(open(tmp_path / "schwinger.csv")))
    assert rows == [["t", "value", "stderr"]]
    assert rep["passed"]


def test_failing_check_exits_1(tmp_path):
    res = SuiteResult("bad", None, [Check("x", 2.0, 0.0, "abs_err", 2.0, 1.0, False)])
    rep = emit(tmp_path, "run", {}, 0, [res])
    assert rep["failures"] == ["bad:x"] and not rep["passed"]


def test_spectrum_rows_match_request(tmp_path):
    assert main(["--out", str(tmp_path), "fock", "--K", "1", "--nmax", "4", "--eigs", "7"]) == 0
    rows = list(csv.reader(open(tmp_path / "spectrum.csv")))
    assert rows[0] == ["index", "E", "P"] and len(rows) == 8
    assert _report(tmp_path)["results"]["dimension"] == 35


def test_sample_command_with_dumps(tmp_path):
    code = main(["--out", str(tmp_path), "sample", "--nt", "8", "--nx", "8", "-n", "2000",
                 "--kernel-dump", "--fields-dump"])
    assert code == 0
    assert (tmp_path / "kernel.csv").exists() and (tmp_path / "fields.phi2").exists()
    from thermalphi.lattice import read_fields
    fields, spec = read_fields(tmp_path / "fields.phi2")
    assert fields.shape == (16, 8, 8) and spec.nt == 8


def test_interact_command(tmp_path):
    assert main(["--out", str(tmp_path), "interact", "--nt", "8", "--nx", "16", "-n", "500"]) == 0
    res = _report(tmp_path)["results"]
    assert res["method"] == "reweight" and res["Z"]["value"] > 0


def test_propagator_command(tmp_path, capsys):
    prof = {"terms": [{"time_modes": {"0": [0.8, 0.0]}, "amplitude": 1.0, "center": 0.0, "width": 0.3}]}
    f = tmp_path / "f.json"
    f.write_text(json.dumps(prof))
    out = tmp_path / "p.json"
    assert main(["--out", str(out), "propagator", "--f", str(f), "--a", "-2", "--b", "2",
                 "--K", "1", "--nmax", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) >= {"matrix_element_re", "matrix_element_im", "steps", "tol"}
    assert abs(payload["matrix_element_re"]) <= 1
    assert out.exists()


def test_global_flags_after_subcommand(tmp_path):
    assert main(["run", "--suite", "matsubara", "--seed", "2", "--out", str(tmp_path)]) == 0
    assert _report(tmp_path)["seed"] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "thermalphi", "run", "--list"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "crosscheck" in proc.stdout
