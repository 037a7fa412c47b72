import json
import os

import pytest

from billiard_mme import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_renewal_report(capsys):
    code, out, _ = run(capsys, "renewal", "--r", "1,2", "--report")
    assert code == 0
    doc = json.loads(out)
    res = doc["result"]
    assert doc["command"] == "renewal" and doc["schema_version"] == 1
    assert res["lambda"] == pytest.approx(2.0) and res["S"] == pytest.approx(1.5)
    assert res["w"] == pytest.approx([2 / 3, 1 / 3])
    assert res["entropy_gap"] < 1e-12


def test_no_arguments_prints_help(capsys):
    code, out, err = run(capsys)
    assert code == 2 and "usage" in err and out == ""


@pytest.mark.parametrize("argv", [["renewal", "--r", "1"], ["renewal", "--r", "0,0"],
                                  ["nosuch"], ["renewal"], ["renewal", "--r", "2", "--alpha", "4"],
                                  ["tiers", "--h", "1"]])
def test_validation_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err


def test_budget_error_exits_3(capsys):
    code, _, err = run(capsys, "renewal", "--alpha", "4", "--N", "20", "--report")
    assert code == 3 and "truncation" in err


def test_parse_error_prints_grammar(capsys, tmp_path):
    bad = tmp_path / "bad.spec"
    bad.write_text("r one 2\n")
    code, _, err = run(capsys, "renewal", "--spec", str(bad))
    assert code == 2
    assert "line 1" in err and err.count("parametric <lambda> <alpha> [N]") == 1
    table = tmp_path / "bad.table"
    table.write_text("disk 0 0\n")
    code, _, err = run(capsys, "table-check", "--table", str(table))
    assert code == 2 and "disk" in err


def test_global_flags_before_or_after_command(capsys):
    a = run(capsys, "--seed", "3", "--format", "csv", "renewal", "--r", "1,2")
    b = run(capsys, "renewal", "--r", "1,2", "--seed", "3", "--format", "csv")
    assert a[0] == b[0] == 0 and a[1] == b[1]
    assert a[1].splitlines()[0] == "n,w_n,p_n"


def test_out_directory_and_manifest(capsys, tmp_path):
    import jsonschema
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "operator", "--r", "1,2", "--n", "10", "--out", str(out))
    assert code == 0
    names = sorted(os.listdir(out))
    assert names == ["operator.json", "operator.manifest.json", "operator_counts.csv"]
    report = (out / "operator.json").read_text()
    assert report == stdout
    manifest = json.loads((out / "operator.manifest.json").read_text())
    jsonschema.validate(manifest, cli.load_schema("manifest"))
    digests = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    assert digests["operator.json"] == cli.sha256(report)
    assert manifest["argv"][0] == "operator" and "numpy" in manifest["versions"]
    rows = (out / "operator_counts.csv").read_text().splitlines()
    assert rows[0] == "n,a_n,a_n_lambda_pow_minus_n" and rows[3].startswith("2,3,")


def test_out_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert run(capsys, "tiers", "--h", "1.0", "--s0", "0.2")[0] == 0
    assert (tmp_path / "tiers.manifest.json").exists()
    assert not any(n.endswith(".partial") for n in os.listdir(tmp_path))


def test_config_digest_tracks_arguments(capsys, tmp_path):
    digests = []
    for r in ("1,2", "1,2", "1,3"):
        d = tmp_path / r.replace(",", "_") / str(len(digests))
        run(capsys, "renewal", "--r", r, "--out", str(d))
        digests.append(json.loads((d / "renewal.manifest.json").read_text())["config_digest"])
    assert digests[0] == digests[1] != digests[2]


def test_non_finite_values_are_serialised():
    doc = json.loads(cli.dumps(cli.to_jsonable({"a": float("inf"), "b": [float("nan")]})))
    assert doc == {"a": "inf", "b": ["nan"]}


def test_table_check_and_operator_dichotomy(capsys):
    code, out, _ = run(capsys, "table-check")
    assert code == 0 and json.loads(out)["result"]["finite_horizon_certified"]
    code, out, _ = run(capsys, "operator", "--r", "1,2", "--scale", "0.9", "--steps", "50")
    assert json.loads(out)["result"]["dichotomy"]["verdict"] == "decay"


def test_tiers_with_complexity(capsys):
    code, out, _ = run(capsys, "tiers", "--h", "1.0", "--s0", "0.1", "--k-n", "2,3,3,3,3,3")
    res = json.loads(out)["result"]
    assert code == 0 and "super-polynomial" in res["billiard"]["tags"]


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "billiard_mme", "renewal", "--r", "2"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["result"]["lambda"] == 2.0
