import csv
import io
import json

import jsonschema
import pytest

from kcip_lab.cli import load_config, main, manifest_schema, read_config_file, to_csv


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_exact_json(capsys):
    code, out, _ = run(["exact", "--L", "3", "--d", "2", "--c", "1"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["summary"]["stationary_max_error"] < 1e-10
    assert doc["summary"]["states"] == 511


def test_project_csv_row(capsys):
    code, out, _ = run(["project", "--L", "3", "--d", "2", "--c", "1", "--k", "3"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    row = next(r for r in rows if r["i"] == "1" and r["j"] == "2")
    assert row["exact"] == "1/15" and float(row["value"]) == 1 / 15


def test_project_with_p(capsys):
    code, out, _ = run(["project", "--L", "3", "--p", "0.5", "--k", "3"], capsys)
    assert code == 0 and "i,j,value,exact" in out


def test_config_file_and_override(tmp_path, capsys):
    f = tmp_path / "run.cfg"
    f.write_text("# lattice\nL = 3\nd = 2\nc = 2   # density\nk = 3\n")
    cfg = load_config(["project", "--config", str(f), "--c", "1"])
    assert cfg.c == 1 and cfg.k == "3" and cfg.L == 3
    cfg = load_config(["project", "--config", str(f), "--p", "0.1"])
    assert cfg.c is None and cfg.p == 0.1


def test_bad_config_file(tmp_path, capsys):
    f = tmp_path / "bad.cfg"
    f.write_text("colour = blue\n")
    code, _, err = run(["exact", "--config", str(f)], capsys)
    assert code == 2 and json.loads(err)["error"] == "ConfigError"
    f.write_text("L 3\n")
    with pytest.raises(Exception):
        read_config_file(str(f))


@pytest.mark.parametrize("args", [
    ["exact", "--L", "3"],
    ["exact", "--L", "3", "--c", "1", "--p", "0.1"],
    ["exact", "--L", "3", "--c", "20"],
    ["simulate", "--L", "3", "--c", "1", "--replicas", "0"],
    ["coalesce", "--L", "5", "--k", "4", "--q", "0.5"],
    ["drift", "--L", "5", "--c", "1", "--replicas", "1"],
    ["nonsense"],
    ["exact", "--L", "x"],
])
def test_config_errors_exit_2(args, capsys):
    code, out, err = run(args, capsys)
    assert code == 2
    assert len(err.strip().splitlines()) == 1
    assert json.loads(err)["exit_code"] == 2


def test_cap_breach_exit_3(capsys, monkeypatch):
    code, _, err = run(["exact", "--L", "4", "--c", "1"], capsys)
    assert code == 3 and json.loads(err)["error"] == "StateCapError"
    code, _, _ = run(["exact", "--L", "3", "--c", "1", "--max-exact-states", "100"], capsys)
    assert code == 3
    monkeypatch.setenv("KCIP_LAB_MAX_STATES", "100")
    code, _, _ = run(["exact", "--L", "3", "--c", "1"], capsys)
    assert code == 3


def test_manifest_written_and_valid(tmp_path, capsys):
    out = tmp_path / "mix.csv"
    assert main(["mix", "--L", "3", "--c", "1", "--horizon", "20", "--out", str(out)]) == 0
    man = json.loads((tmp_path / "mix.csv.manifest.json").read_text())
    jsonschema.validate(man, manifest_schema())
    assert man["command"] == "mix" and man["config"]["horizon"] == 20
    assert out.read_text().splitlines()[0] == "t,tv"


def test_manifest_reproduces_output(tmp_path):
    out = tmp_path / "sim.csv"
    args = ["simulate", "--L", "5", "--c", "1", "--horizon", "800", "--seed", "3", "--out", str(out)]
    assert main(args) == 0
    man = json.loads((tmp_path / "sim.csv.manifest.json").read_text())
    again = tmp_path / "again.csv"
    rebuilt = ["simulate"]
    for key, val in man["config"].items():
        if val is not None and key != "out":
            rebuilt += [f"--{key.replace('_', '-')}", str(val)]
    assert main(rebuilt + ["--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


@pytest.mark.parametrize("chain", ["se", "se_lazy", "bl", "perfect", "bl_mh", "se_mh"])
def test_exact_other_chains(chain, capsys):
    code, out, _ = run(["exact", "--L", "3", "--k", "2", "--chain", chain], capsys)
    assert code == 0
    s = json.loads(out)["summary"]
    assert s["row_sum_defect"] < 1e-12 and s["stationary_max_error"] < 1e-10


def test_trace_stream_columns(capsys):
    code, out, _ = run(["trace", "--L", "3", "--c", "1", "--k", "1", "--horizon", "5000"], capsys)
    assert code == 0
    assert out.splitlines()[0].endswith("empirical,std_error")


def test_flows_small_instance(capsys):
    code, out, _ = run(["flows", "--L", "3", "--k", "2", "--format", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["summary"]["fallback_pairs"] == 306


def test_csv_float_format():
    text = to_csv(("a", "b"), [(0.1, 1 / 3), (True, 2)])
    assert text == "a,b\n0.1,0.3333333333333333\n1,2\n"


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "kcip_lab", "project", "--L", "3", "--c", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "1/15" in res.stdout
