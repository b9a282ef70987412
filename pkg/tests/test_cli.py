import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from oscillate.cli import eval_fraction, main
from oscillate.grid import from_bytes


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cell_prints_value(tmp_path, capsys):
    code, out, _ = run(["cell", "--spec", "cos1d", "--M", "1", "--out", tmp_path / "o"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "effective_value 1.732050808"
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"cell.json", "corrector.csv",
                                                            "manifest.json"}


def test_schema_error_reports_line(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("schema: oscillate.run/1\nspec: cos1d\n\nresoluton: 64\n")
    code, _, err = run(["cell", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert f"{cfg}:line 4: " in err and "resoluton" in err
    cfg.write_text("schema: oscillate.run/1\nmu: 2.0\n")
    code, _, err = run(["cell", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2 and ":line 2: " in err


def test_solve_zero_data(tmp_path, capsys):
    out = tmp_path / "z"
    code, text, _ = run(["solve", "--spec", "cc2d", "--resolution", 16, "--epsilon", "1/4",
                         "--rhs", 0, "--boundary", 0, "--out", out], capsys)
    assert code == 0 and "sup_abs 0\n" in text
    u = from_bytes((out / "solution.bin").read_bytes())
    assert u.grid.shape == (17, 17) and np.all(u.values == 0)


def test_force_rerun_is_byte_identical(tmp_path, capsys):
    out = tmp_path / "c"
    args = ["cell", "--spec", "sin1d", "--M", "-1", "--resolution", 32, "--out", out]
    assert run(args, capsys)[0] == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    code, _, err = run(args, capsys)
    assert code == 2 and "not empty" in err
    assert run(args + ["--force"], capsys)[0] == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second
    manifest = json.loads(first["manifest.json"])
    for name, digest in manifest["files"].items():
        assert hashlib.sha256(first[name]).hexdigest() == digest
    assert "jobs" not in manifest["config"] and "output" not in manifest["config"]


def test_check_mono(tmp_path, capsys):
    code, out, _ = run(["check", "--lemma", "mono", "--pair", "remark",
                        "--out", tmp_path / "m"], capsys)
    assert code == 0
    assert out.startswith("mono=PASS ")


def test_unknown_spec_and_bad_flags(tmp_path, capsys):
    code, _, err = run(["cell", "--spec", "nope", "--out", tmp_path / "a"], capsys)
    assert code == 2 and "nope" in err
    code, _, err = run(["blayer", "--spec", "cos1d", "--epsilons", "0.3", "--out",
                        tmp_path / "b"], capsys)
    assert code == 2
    with pytest.raises(SystemExit):
        main(["cell", "--epsilon", "-1/2"])


def test_eval_fraction():
    assert eval_fraction("1/16") == 0.0625
    assert eval_fraction("0.5") == 0.5


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "oscillate.cli", "cell", "--spec", "cos1d",
                           "--M", "2", "--resolution", "32", "--out", str(tmp_path / "e")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert float(proc.stdout.split()[1]) == pytest.approx(2 * np.sqrt(3), abs=1e-8)
