import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gtrident import cli, io
from gtrident.errors import ValidationError
from gtrident.forward import JointTensor, joint3_exact
from gtrident.model import GammaRates, TripleTree
from gtrident.sampling import jc_model, random_model, rng_for

JC_DOC = {
    "kappa": 4,
    "pi": [0.25] * 4,
    "exchangeabilities": [[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]],
    "alpha": 0.8,
    "edge_lengths": {"a": 0.1, "b": 0.2, "c": 0.3},
}


@pytest.fixture
def jc_file(tmp_path):
    path = tmp_path / "jc.json"
    path.write_text(json.dumps(JC_DOC))
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


# -- file formats --------------------------------------------------------------


def test_parse_model_variants():
    spec = io.parse_model(JC_DOC)
    assert spec.warning is None
    assert tuple(spec.tree.lengths) == (0.1, 0.2, 0.3)
    doc = dict(JC_DOC, edge_lengths=[0.1, 0.2, 0.3])
    del doc["exchangeabilities"]
    doc["Q"] = (2 * jc_model().q.q).tolist()
    spec = io.parse_model(doc)
    assert spec.rescale_factor == pytest.approx(0.5)
    assert "rescaled" in spec.warning
    np.testing.assert_allclose(spec.model.q.q, jc_model().q.q, atol=1e-15)


@pytest.mark.parametrize(
    "doc",
    [
        [1, 2],
        {"pi": [0.5, 0.5], "alpha": 1.0},
        {"pi": [0.5, 0.5], "Q": [[-1, 1], [1, -1]]},
        {"pi": [0.5, 0.5], "kappa": 3, "Q": [[-1, 1], [1, -1]], "alpha": 1.0},
        dict(JC_DOC, Q=jc_model().q.q.tolist()),
    ],
)
def test_parse_model_rejects(doc):
    with pytest.raises(ValidationError):
        io.parse_model(doc)


@pytest.mark.parametrize("suffix", [".json", ".gtrj"])
def test_tensor_round_trip(tmp_path, suffix):
    model, rates, tree = random_model(rng_for(3), 4)
    joint = joint3_exact(model, rates, tree)
    path = tmp_path / f"p{suffix}"
    io.write_tensor(path, joint)
    back = io.read_tensor(path)
    np.testing.assert_array_equal(back.p, joint.p)
    assert back.kappa == 4 and back.n == 3


def test_binary_layout(tmp_path):
    joint = joint3_exact(jc_model(2), GammaRates(1.0), TripleTree(0.1, 0.2, 0.3))
    path = tmp_path / "p.gtrj"
    io.write_tensor(path, joint)
    raw = path.read_bytes()
    assert raw[:4] == b"GTRJ"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 3
    assert len(raw) == 16 + 8 * 8
    np.testing.assert_array_equal(np.frombuffer(raw[16:], "<f8"), joint.p)


def test_corrupted_tensors_rejected(tmp_path):
    bad = tmp_path / "bad.gtrj"
    bad.write_bytes(b"GTRJ" + (4).to_bytes(4, "little") + (3).to_bytes(4, "little") + bytes(4) + bytes(16))
    with pytest.raises(ValidationError):
        io.read_tensor(bad)
    junk = tmp_path / "junk.json"
    junk.write_bytes(b"\xff\xfe not json")
    with pytest.raises(ValidationError):
        io.read_tensor(junk)
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"kappa": 4, "p": [0.5, 0.5]}))
    with pytest.raises(ValidationError):
        io.read_tensor(wrong)


def test_csv_uses_17_digits(tmp_path):
    path = tmp_path / "x.csv"
    io.write_csv(path, ["a", "b"], [[0.1, "x"], [np.float64(1 / 3), 2]])
    lines = path.read_text().splitlines()
    assert lines == ["a,b", "0.10000000000000001,x", "0.33333333333333331,2"]


# -- CLI -------------------------------------------------------------------------


def test_forward_then_recover(tmp_path, jc_file, capsys):
    tensor = tmp_path / "p.json"
    assert _run("forward", "--model", jc_file, "--out", tensor, "--oracle") == 0
    doc = json.loads(tensor.read_text())
    assert doc["oracle"]["nodes"] == 64
    assert doc["oracle"]["max_deviation"] < 1e-8
    out = tmp_path / "rec.json"
    assert _run("recover", "--tensor", tensor, "--out", out) == 0
    rec = json.loads(out.read_text())
    assert rec["alpha"] == pytest.approx(0.8, rel=1e-9)
    assert rec["regime"]["type"] == "CaseA1"
    capsys.readouterr()


def test_forward_is_byte_identical(tmp_path, jc_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run("forward", "--model", jc_file, "--t", 0.2, 0.1, 0.4, "--out", a) == 0
    assert _run("forward", "--model", jc_file, "--t", 0.2, 0.1, 0.4, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_forward_newick_and_tree_recovery(tmp_path, jc_file):
    tensor = tmp_path / "p4.gtrj"
    newick = "((a:0.1,b:0.2):0.15,(c:0.1,d:0.3));"
    assert _run("forward", "--model", jc_file, "--newick", newick, "--out", tensor) == 0
    out = tmp_path / "rec4.json"
    assert _run("recover", "--tensor", tensor, "--out", out) == 0
    nwk = (tmp_path / "rec4.nwk").read_text().strip()
    assert nwk.endswith(";")
    rec = json.loads(out.read_text())
    assert rec["alpha"] == pytest.approx(0.8, rel=1e-7)


def test_two_state_symmetric_exit_code(tmp_path, capsys):
    model = tmp_path / "k2.json"
    model.write_text(json.dumps({"pi": [0.5, 0.5], "Q": [[-2, 2], [2, -2]], "alpha": 1.0}))
    tensor = tmp_path / "k2.gtrj"
    assert _run("forward", "--model", model, "--t", 0.1, 0.2, 0.3, "--out", tensor) == 0
    assert "rescaled" in capsys.readouterr().out
    assert _run("recover", "--tensor", tensor, "--out", tmp_path / "r.json") == 2
    assert "non-identifiable (kappa=2 symmetric)" in capsys.readouterr().err


def test_invalid_input_exit_code(tmp_path, jc_file, capsys):
    assert _run("forward", "--model", jc_file, "--t", 0, 0, 0.3, "--out", tmp_path / "x.json") == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kappa": 2, "p": [0.5, 0.6, -0.1, 0.0]}))
    assert _run("recover", "--tensor", bad, "--out", tmp_path / "r.json") == 1
    capsys.readouterr()


def test_missing_file_exit_code(tmp_path, capsys):
    assert _run("recover", "--tensor", tmp_path / "nope.json", "--out", tmp_path / "r.json") == 3
    assert "I/O error" in capsys.readouterr().err


def test_non_gtr_tensor_exit_code(tmp_path, capsys):
    rng = np.random.default_rng(0)
    p = rng.uniform(size=8)
    p = p + p.reshape(2, 2, 2).transpose(1, 0, 2).ravel()
    path = tmp_path / "noise.json"
    io.write_tensor(path, JointTensor(2, p / p.sum()))
    assert _run("recover", "--tensor", path, "--out", tmp_path / "r.json") == 2
    capsys.readouterr()


def test_roundtrip_csv(tmp_path, capsys):
    out = tmp_path / "rt.csv"
    assert _run("roundtrip", "--seed", 5, "--trials", 6, "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6
    assert [int(r["seed"]) for r in rows] == list(range(5, 11))
    assert all(r["ok"] == "1" and r["path"] == "pair-equation" for r in rows)
    summary = json.loads(capsys.readouterr().out)
    assert summary["failures"] == 0
    again = tmp_path / "rt2.csv"
    assert _run("roundtrip", "--seed", 5, "--trials", 6, "--out", again) == 0
    assert out.read_bytes() == again.read_bytes()
    capsys.readouterr()


@pytest.mark.parametrize("regime, path", [("jc", "distinct-index-equation"), ("caseB", "repeated-index-equation")])
def test_roundtrip_fixed_regimes(tmp_path, capsys, regime, path):
    out = tmp_path / "rt.csv"
    assert _run("roundtrip", "--regime", regime, "--trials", 3, "--out", out) == 0
    assert {r["path"] for r in csv.DictReader(out.open())} == {path}
    capsys.readouterr()


def test_classify(tmp_path, jc_file, capsys):
    out = tmp_path / "c.json"
    assert _run("classify", "--model", jc_file, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["regime"]["type"] == "CaseA1"
    assert doc["nonzero_triple"] == [1, 2, 3]
    assert all(doc["inequalities"].values())
    capsys.readouterr()


def test_counterexamples(tmp_path, capsys):
    csv_out = tmp_path / "curve.csv"
    assert _run("counterexample", "rogers-curve", "--out", csv_out) == 0
    assert json.loads(capsys.readouterr().out)["inflections"] == 3
    assert _run("counterexample", "phi", "--x", 0, "--y", 0) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "line"
    assert _run("counterexample", "binary-nonident", "--out-dir", tmp_path / "w") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["feasible"] and summary["max_deviation"] < 1e-14
    first = io.load_model(tmp_path / "w" / "model_1.json")
    assert first.rates.alpha == 1.0
    assert _run("counterexample", "binary-nonident", "--t", 0.01, 0.3, 0.9, "--alpha-alt", 0.05) == 2
    capsys.readouterr()


# -- tolerance override ----------------------------------------------------------


def test_tolerance_env(monkeypatch):
    monkeypatch.delenv("GTRIDENT_TOL", raising=False)
    assert cli.tolerances()["residual"] == 1e-8
    monkeypatch.setenv("GTRIDENT_TOL", "1e-6")
    assert cli.tolerances()["residual"] == 1e-6
    monkeypatch.setenv("GTRIDENT_TOL", "nu=1e-12, alpha=1e-5")
    tol = cli.tolerances()
    assert tol["nu"] == 1e-12 and tol["alpha"] == 1e-5
    monkeypatch.setenv("GTRIDENT_TOL", "speed=3")
    with pytest.raises(ValidationError):
        cli.tolerances()


def test_console_entry_point(tmp_path, jc_file):
    env = dict(os.environ, GTRIDENT_NUMBA="0")
    out = tmp_path / "p.json"
    proc = subprocess.run(
        [sys.executable, "-m", "gtrident.cli", "forward", "--model", str(jc_file), "--out", str(out)],
        capture_output=True, text=True, env=env, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["n"] == 3
