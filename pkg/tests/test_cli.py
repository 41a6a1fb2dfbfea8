import csv
import json
import subprocess
import sys

import pytest

from cpk.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_domains_list(capsys):
    assert run("domains", "list") == 0
    assert capsys.readouterr().out.split() == ["toy", "nav2d"]


def test_export_then_explain_from_files(tmp_path, capsys):
    exp = tmp_path / "exp"
    assert run("domains", "export", "--domain", "toy", "--out", exp) == 0
    assert sorted(p.name for p in exp.iterdir()) == ["toy_mdp.json", "toy_pi_b.json", "toy_pi_e.json"]
    out = tmp_path / "o"
    code = run("explain", "--mdp", exp / "toy_mdp.json", "--pi-b", exp / "toy_pi_b.json",
               "--pi-e", exp / "toy_pi_e.json", "--seed", 0, "--out", out)
    assert code == 0
    text = (out / "explanation.txt").read_text(encoding="utf-8")
    assert "in region s_5, doing action 1 instead of action 0" in text


def test_explain_outputs(tmp_path):
    out = tmp_path / "o"
    assert run("explain", "--domain", "toy", "--seed", 0, "--out", out) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["diverging_states.csv", "explanation.json", "explanation.png", "explanation.txt"]
    payload = json.loads((out / "explanation.json").read_text(encoding="utf-8"))
    assert payload["action_pairs"] == [{"label": 1, "action_b": 0, "action_e": 1}]
    rows = read_csv(out / "diverging_states.csv")
    assert {r["state_repr"] for r in rows if r["label"] == "1"} == {"s_1", "s_5"}
    assert (out / "explanation.png").read_bytes()[:4] == b"\x89PNG"


def test_optimize_toy_frontier(tmp_path):
    out = tmp_path / "o"
    assert run("optimize", "--domain", "toy", "--kappa", 8, "--kappa", 0, "--kappa", 2,
               "--seed", 0, "--out", out) == 0
    rows = read_csv(out / "frontier.csv")
    assert [r["kappa"] for r in rows] == ["0", "2", "8"]
    rets = [float(r["expected_return"]) for r in rows]
    assert rets == sorted(rets)
    assert [float(r["aggregate_changes"]) for r in rows] == [0.0, 2.0, 8.0]
    pol = json.loads((out / "policy_kappa_0.json").read_text())
    assert pol["kind"] == "tabular"
    assert (out / "explanation_kappa_0.txt").read_text().strip().endswith("act the same.")


def test_optimize_nav_writes_region_mdp(tmp_path):
    out = tmp_path / "o"
    assert run("optimize", "--domain", "nav2d", "--seed", 0, "--out", out) == 0
    rows = read_csv(out / "frontier.csv")
    assert [r["kappa"] for r in rows] == ["1", "2", "inf"]
    assert float(rows[-1]["expected_return"]) == pytest.approx(21.99)
    assert (out / "region_mdp.json").exists() and (out / "frontier.png").exists()


def test_compare_baseline_toy(tmp_path):
    out = tmp_path / "o"
    assert run("compare-baseline", "--domain", "toy", "--seed", 0, "--out", out) == 0
    meta = json.loads((out / "baseline_meta.json").read_text())
    assert meta["pi_subset_of_cmdp"] and meta["pi_reaches_optimum"]
    methods = [r["method"] for r in read_csv(out / "baseline.csv")]
    assert methods.count("CMDP") == 9 and methods.count("PI") == 3


def test_errors_are_json_on_stderr(tmp_path, capsys):
    assert run("explain", "--domain", "maze", "--seed", 0, "--out", tmp_path) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValueError" and "maze" in err["message"]
    assert run("explain", "--mdp", tmp_path / "missing.json", "--pi-b", "b", "--seed", 0, "--out", tmp_path) == 2
    assert run("explain", "--domain", "toy", "--kappa-pi", 2, "--seed", 0, "--out", tmp_path) == 2


def test_seed_is_mandatory():
    with pytest.raises(SystemExit) as exc:
        run("explain", "--domain", "toy")
    assert exc.value.code == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cpk.cli", "domains", "list"], capture_output=True, text=True,
                         env={"CPK_THREADS": "2", "PATH": ""}, cwd=tmp_path)
    assert res.returncode == 0 and "nav2d" in res.stdout


def test_repeat_runs_are_byte_identical(tmp_path):
    for tag in ("a", "b"):
        assert run("explain", "--domain", "nav2d", "--pi-e", "e1", "--seed", 3, "--out", tmp_path / tag) == 0
    for name in ("explanation.txt", "explanation.json", "diverging_states.csv", "explanation.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
