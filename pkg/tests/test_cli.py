"""Command-line behaviour, exercised in-process through ``main``."""

from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from fbc.cli import main, parse_range, render_svg
from fbc.core_model import load_instance, matched_instance, save_instance


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# bound


def test_bound_row_count(capsys):
    code, out, _ = run(capsys, "bound", "--family", "bsc-strong", "--eps", "0.11", "--rate", "0.6",
                       "--n", "10:200:10")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 21
    assert lines[0].startswith("family,n")
    assert [int(r["n"]) for r in rows_of(out)] == list(range(10, 201, 10))


def test_bound_matched_values(capsys):
    code, out, _ = run(capsys, "bound", "--family", "qary-matched", "--q", "3", "--eps", "0.2", "--n", "1:5")
    assert code == 0
    rows = rows_of(out)
    assert len(rows) == 5
    assert all(r["value"] == "0.2" for r in rows)


def test_bound_unknown_family(capsys):
    code, _, err = run(capsys, "bound", "--family", "bogus", "--n", "1")
    assert code == 2
    assert "usage:" in err
    assert "unknown family" in err


def test_bound_missing_parameter(capsys):
    code, _, err = run(capsys, "bound", "--family", "bsc-naive", "--n", "5")
    assert code == 2
    assert "--eps" in err


def test_bound_domain_error(capsys):
    code, _, _ = run(capsys, "bound", "--family", "bsc-naive", "--eps", "0.7", "--rate", "0.5", "--n", "5")
    assert code == 2


def test_bound_writes_file_and_jobs_keep_order(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["bound", "--family", "bms-sc-improved", "--p", "0.22", "--level", "0.11", "--rate", "0.5",
            "--k", "5:40:5"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b), "--jobs", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    ks = [int(r["k"]) for r in csv.DictReader(a.open())]
    assert ks == list(range(5, 41, 5))


def test_parse_range():
    assert parse_range("3") == [3]
    assert parse_range("1:4") == [1, 2, 3, 4]
    assert parse_range("10:30:10") == [10, 20, 30]
    assert parse_range("2,5,7") == [2, 5, 7]


def test_bad_range(capsys):
    code, _, err = run(capsys, "bound", "--family", "bsc-naive", "--eps", "0.1", "--rate", "0.5", "--n", "9:1")
    assert code == 2
    assert "bad range" in err


# ---------------------------------------------------------------------------
# verify and export


def test_verify_builtin_naive(capsys):
    code, out, _ = run(capsys, "verify", "--builtin", "bsc-naive", "--n", "2", "--eps", "0.1", "--M", "4")
    assert code == 0
    assert out.strip() == "feasible, objective 0.19"


def test_verify_builtin_rational(capsys):
    code, out, _ = run(capsys, "verify", "--builtin", "bsc-naive", "--n", "2", "--eps", "1/10", "--M", "4",
                       "--mode", "rational")
    assert code == 0
    assert out.strip() == "feasible, objective 0.19"


def test_verify_matched_builtin(capsys):
    code, out, _ = run(capsys, "verify", "--builtin", "matched", "--q", "2", "--n", "2", "--eps", "1/5",
                       "--mode", "rational")
    assert code == 0
    assert out.strip() == "feasible, objective 0.2"


@pytest.fixture
def exported(tmp_path):
    inst, cert = tmp_path / "inst.json", tmp_path / "cert.json"
    assert main(["export", "--builtin", "bsc-naive", "--n", "2", "--eps", "0.1", "--M", "4",
                 "--out", str(inst), "--certificate", str(cert)]) == 0
    return inst, cert


def test_verify_files_roundtrip(exported, capsys):
    inst, cert = exported
    code, out, _ = run(capsys, "verify", "--instance", str(inst), "--certificate", str(cert))
    assert code == 0
    assert out.startswith("feasible")


def test_verify_tampered_certificate(exported, capsys):
    inst, cert = exported
    data = json.loads(cert.read_text())
    data["gamma_a"][0] = data["gamma_a"][0] + 1.0
    cert.write_text(json.dumps(data))
    code, out, _ = run(capsys, "verify", "--instance", str(inst), "--certificate", str(cert))
    assert code == 1
    assert out.startswith("infeasible")
    assert "residual" in out and " at " in out


def test_verify_wrong_dimension(exported, capsys):
    inst, cert = exported
    data = json.loads(cert.read_text())
    data["gamma_a"] = data["gamma_a"][:3]
    cert.write_text(json.dumps(data))
    code, _, _ = run(capsys, "verify", "--instance", str(inst), "--certificate", str(cert))
    assert code == 2


def test_verify_needs_inputs(capsys):
    assert run(capsys, "verify")[0] == 2
    assert run(capsys, "verify", "--builtin", "nothing")[0] == 2


def test_export_needs_target(capsys):
    assert run(capsys, "export", "--builtin", "bsc-naive", "--n", "2", "--eps", "0.1", "--M", "4")[0] == 2


def test_missing_file_is_runtime_failure(tmp_path, capsys):
    code, _, _ = run(capsys, "lp", "--instance", str(tmp_path / "none.json"))
    assert code == 1


def test_instance_file_roundtrip_exact(tmp_path):
    inst = matched_instance(2, 2, "1/10", mode="rational")
    path = tmp_path / "m.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert back.mode == "rational"
    assert (np.asarray(back.channel.matrix) == np.asarray(inst.channel.matrix)).all()
    assert (np.asarray(back.source.mass) == np.asarray(inst.source.mass)).all()
    save_instance(back, tmp_path / "m2.json")
    assert (tmp_path / "m2.json").read_bytes() == path.read_bytes()


# ---------------------------------------------------------------------------
# sandwich and lp


def test_sandwich_matched_equal(capsys):
    code, out, _ = run(capsys, "sandwich", "--builtin", "matched", "--q", "2", "--n", "2", "--eps", "1/10",
                       "--mode", "rational")
    assert code == 0
    values = [line.split()[-1] for line in out.strip().splitlines()]
    assert len(values) == 3
    assert values == ["0.1"] * 3


def test_lp_command(tmp_path, capsys):
    listing = tmp_path / "lp.txt"
    code, out, _ = run(capsys, "lp", "--builtin", "matched", "--q", "2", "--n", "1", "--eps", "1/10",
                       "--mode", "rational", "--text", str(listing))
    assert code == 0
    assert out.startswith("LP optimal 0.1")
    assert listing.read_text().startswith("# tag=LP")
    code, out, _ = run(capsys, "lp", "--prime", "--builtin", "matched", "--q", "2", "--n", "1", "--eps", "1/10")
    assert code == 0
    assert out.startswith("LP_PRIME optimal 0.1")


def test_fbc_mode_env(monkeypatch, tmp_path):
    args = ["export", "--builtin", "bsc-naive", "--n", "1", "--eps", "1/10", "--M", "2", "--out"]
    monkeypatch.setenv("FBC_MODE", "rational")
    assert main(args + [str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["channel"][0] == ["9/10", "1/10"]
    monkeypatch.setenv("FBC_MODE", "float")
    assert main(args + [str(tmp_path / "f.json")]) == 0
    assert json.loads((tmp_path / "f.json").read_text())["channel"][0] == [0.9, 0.1]
    # an explicit flag wins over the environment
    assert main(args + [str(tmp_path / "x.json"), "--mode", "rational"]) == 0
    assert json.loads((tmp_path / "x.json").read_text())["source"] == ["1/2", "1/2"]


def test_fbc_mode_env_invalid(monkeypatch, capsys):
    monkeypatch.setenv("FBC_MODE", "quad")
    code, _, err = run(capsys, "verify", "--builtin", "bsc-naive", "--n", "2", "--eps", "0.1", "--M", "4")
    assert code == 2
    assert "FBC_MODE" in err


# ---------------------------------------------------------------------------
# plot


@pytest.fixture
def two_family_csv(tmp_path):
    path = tmp_path / "sweep.csv"
    path.write_text("family,n,value\n"
                    "kv,10,0.01\nkv,20,0.02\nkv,30,0.05\n"
                    "improved,10,0.03\nimproved,20,0.04\nimproved,30,0.08\n")
    return path


def test_plot_two_polylines_stable(two_family_csv, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", "--csv", str(two_family_csv), "--out", str(a)]) == 0
    assert main(["plot", "--csv", str(two_family_csv), "--out", str(b)]) == 0
    text = a.read_text()
    assert text.count("<polyline") == 2
    assert 'viewBox="0 0 960 540"' in text
    assert ">kv<" in text and ">improved<" in text
    assert a.read_bytes() == b.read_bytes()


def test_plot_logy(two_family_csv, tmp_path):
    out = tmp_path / "log.svg"
    assert main(["plot", "--csv", str(two_family_csv), "--out", str(out), "--logy", "--title", "a < b"]) == 0
    text = out.read_text()
    assert "1e-2" in text
    assert "a &lt; b" in text


def test_plot_empty_csv(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("family,n,value\n")
    code, _, _ = run(capsys, "plot", "--csv", str(empty), "--out", str(tmp_path / "x.svg"))
    assert code == 2


def test_plot_falls_back_to_k(tmp_path):
    path = tmp_path / "k.csv"
    path.write_text("family,n,k,value\nbms,,4,0.5\nbms,,8,0.4\n")
    out = tmp_path / "k.svg"
    assert main(["plot", "--csv", str(path), "--out", str(out)]) == 0
    assert ">k<" in out.read_text()


def test_render_rejects_nothing():
    from fbc.cli import UsageError

    with pytest.raises(UsageError):
        render_svg({"a": [(1.0, float("nan"))]}, "x", "y")


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "fbc.cli", "bound", "--family", "qary-matched", "--q", "2",
                          "--eps", "0.1", "--n", "1:2"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[1].endswith(",0.1")


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
