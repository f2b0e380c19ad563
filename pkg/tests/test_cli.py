import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimentropy.cli import atomic_write, main

GOLDEN = Path(__file__).parent / "golden"
FAST = ["--system", "doubling", "--delta", "0.2,0.1", "--n", "2,3,4", "--seed", "0"]


def test_entropy_csv_matches_golden(tmp_path):
    assert main(["entropy", "preimage", *FAST, "--out", str(tmp_path)]) == 0
    out = (tmp_path / "entropy_preimage_doubling.csv").read_text()
    assert out == (GOLDEN / "entropy_preimage_doubling.csv").read_text()


def test_entropy_json_field_names(tmp_path):
    assert main(["entropy", "preimage", *FAST, "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "entropy_preimage_doubling.json").read_text())
    assert list(doc) == ["quantity", "m", "l", "rows", "extrapolated", "slopes", "spread", "diagnostics"]
    assert list(doc["rows"][0]) == ["delta", "n", "count", "rate"]


def test_env_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("DIMENTROPY_OUT", str(tmp_path))
    assert main(["entropy", "preimage", *FAST]) == 0
    assert (tmp_path / "entropy_preimage_doubling.csv").exists()


def test_missing_output_directory(tmp_path, capsys):
    missing = tmp_path / "nope"
    assert main(["entropy", "preimage", *FAST, "--out", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_validation_exit_code(tmp_path, capsys):
    assert main(["entropy", "top", "--system", "tent", "--delta", "0.1,0.2", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "seed" in err and "delta" in err and "registry names" in err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ncommand = entropy\nquantity = preimage\nseed = 0\n[system]\nname = henon\n"
                   "[schedule]\ndelta = 0.2\nn = 1, 2\n[output]\nformat = json\n")
    assert main(["entropy", "preimage", "--config", str(cfg), "--system", "doubling", "--format", "csv",
                 "--out", str(tmp_path)]) == 0
    text = (tmp_path / "entropy_preimage_doubling.csv").read_text().splitlines()
    assert len(text) == 3


def test_config_parse_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nseed\n")
    assert main(["entropy", "top", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_verify_thm3_doubling(tmp_path):
    assert main(["verify", "thm3", "--system", "doubling", "--seed", "0", "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "verify_thm3_doubling.json").read_text())
    assert doc["passed"] is True
    assert {r["scenario"] for r in doc["reports"]} == {"thm3", "pipeline_thm3"}


def test_lyapunov_and_graph_demo(tmp_path):
    assert main(["lyapunov", "--system", "cat", "--seed", "0", "--steps", "2000", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "lyapunov_spectrum_cat.csv").read_text().splitlines()
    assert rows[0] == "index,exponent,stderr" and len(rows) == 3
    assert main(["graph", "demo", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "graph_demo_patch.txt").read_text().startswith("# dims 1 1 2")


def test_plot_flag(tmp_path):
    assert main(["entropy", "preimage", *FAST, "--out", str(tmp_path), "--plot"]) == 0
    assert (tmp_path / "entropy_preimage_doubling.svg").read_text().lstrip().startswith("<?xml")
    assert (tmp_path / "entropy_preimage_doubling.dat").exists()


def test_dim_entropy_one_row_per_pair(tmp_path):
    args = ["entropy", "dim", "--system", "henon", "--m", "1", "--l", "1", "--delta", "0.2,0.1", "--n", "1,2",
            "--seed", "0", "--targets", "1", "--budget", "30", "--out", str(tmp_path)]
    assert main(args) == 0
    lines = (tmp_path / "entropy_dim_m1l1_henon.csv").read_text().splitlines()
    assert lines[0] == "quantity,m,l,delta,n,count,rate"
    assert len(lines) == 1 + 4


@settings(max_examples=50, deadline=None)
@given(st.text(max_size=200))
def test_atomic_write_roundtrip(tmp_path_factory, text):
    d = tmp_path_factory.mktemp("aw")
    p = atomic_write(d / "f.txt", text)
    assert p.read_bytes() == text.encode("utf-8")
    assert [q.name for q in d.iterdir()] == ["f.txt"]


def test_verify_props_skips_invertible_noncompact(tmp_path):
    assert main(["verify", "props", "--system", "henon", "--seed", "0", "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads(next(tmp_path.glob("*.json")).read_text())
    prop = [r for r in doc["reports"] if r["scenario"] == "prop_k0_equals_top"]
    assert len(prop) == 1 and prop[0]["notes"][0].startswith("skipped")
