import hashlib
import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from filelock import FileLock

from rtci import cli
from rtci.bundle import PathBundle, write_bundle
from rtci.validation import NumericalError

HALF_LINE = """
[experiment]
kind = "reflected"
label = "half-line"
T = 1.0
dt = 0.01
M = {M}
seed = 7

[domain]
type = "half-line"

[[gamma]]
label = "e1"
vector = [1.0]
scales = [0.5, 2.0]

[solver]
refine = 2
ot_paths = [32, 64]

[output]
bundle_paths = 64
record_every = 1

[concentration]
functional = "terminal"
r = [0.5, 1.0]
M = 4000
"""

RANKED = """
[experiment]
kind = "ranked"
T = 0.5
dt = 0.01
M = 500
seed = 3

[particles]
g = [1.0, 0.0, 0.0]
sigma = {sigma}
x0 = [0.0, 0.5, 1.0]

[[gamma]]
vector = [1.0, 0.0, 0.0]

[solver]
ot_paths = false
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _run(*args):
    return cli.main([str(a) for a in args])


def test_run_writes_all_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, HALF_LINE.format(M=300))
    out = tmp_path / "out"
    assert _run("run", cfg, "-o", out) == 0
    assert "check A pass" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {"report.json", "report.csv", "paths.rtci"}
    for name, digest in manifest["artifacts"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["config_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert manifest["seed"] == 7 and manifest["code_version"]
    report = json.loads((out / "report.json").read_text())
    assert [r["verdict"] for r in report["results"]] == ["pass", "pass"]


def test_rerun_is_byte_identical_across_worker_counts(tmp_path, monkeypatch):
    # M exceeds the chunk size so several chunks run concurrently
    cfg = _write(tmp_path, HALF_LINE.format(M=5000))
    digests = set()
    for i, workers in enumerate(["1", "4", None]):
        if workers is None:
            monkeypatch.delenv("RTCI_MAX_WORKERS", raising=False)
        else:
            monkeypatch.setenv("RTCI_MAX_WORKERS", workers)
        out = tmp_path / f"out{i}"
        assert _run("run", cfg, "-o", out) == 0
        digests.add(tuple((out / f).read_bytes() for f in ("report.csv", "report.json", "paths.rtci")))
    assert len(digests) == 1


def test_hypothesis_violation_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, RANKED.format(sigma="[1.0, 1.0, 2.0]"))
    assert _run("run", cfg, "-o", tmp_path / "o") == cli.EXIT_HYPOTHESIS
    assert "concavity" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_ranked_run_and_inspect(tmp_path, capsys):
    cfg = _write(tmp_path, RANKED.format(sigma="[1.0, 1.0, 1.0]"))
    assert _run("run", cfg, "-o", tmp_path / "o") == 0
    capsys.readouterr()
    assert _run("inspect", tmp_path / "o" / "paths.rtci") == 0
    out = capsys.readouterr().out
    assert "dim 3" in out and "gap minima" in out
    mins = [float(v) for v in out.split("gap minima")[1].splitlines()[0].split()]
    assert min(mins) >= 0


@pytest.mark.parametrize(
    "patch, field",
    [
        (("dt = 0.01", "dt = -1"), "[experiment]"),
        (("dt = 0.01", 'dt = "fast"'), "[experiment].dt"),
        (("T = 1.0", ""), "[experiment].T"),
        (('kind = "reflected"', 'kind = "oblique"'), "[experiment].kind"),
        (('type = "half-line"', 'type = "sphere"'), "[domain].type"),
        (("vector = [1.0]", "vector = [1.0, 2.0]"), "[gamma.0].vector"),
        (("ot_paths = [32, 64]", "ot_paths = [64, 32]"), "[solver].ot_paths"),
        (("dt = 0.01", "dt = 0.03"), "T/dt"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, patch, field):
    cfg = _write(tmp_path, HALF_LINE.format(M=300).replace(*patch))
    assert _run("run", cfg, "-o", tmp_path / "o") == cli.EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_bad_toml_and_missing_file(tmp_path, capsys):
    cfg = _write(tmp_path, "[experiment\nkind=")
    assert _run("run", cfg) == cli.EXIT_CONFIG
    assert _run("run", tmp_path / "missing.toml") == cli.EXIT_CONFIG
    assert "not valid TOML" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("did not converge")

    monkeypatch.setattr(cli, "verify_tci", boom)
    cfg = _write(tmp_path, HALF_LINE.format(M=300))
    assert _run("run", cfg, "-o", tmp_path / "o") == cli.EXIT_NUMERICAL


def test_locked_output_directory(tmp_path, capsys):
    cfg = _write(tmp_path, HALF_LINE.format(M=300))
    out = tmp_path / "o"
    out.mkdir()
    with FileLock(str(out / ".rtci.lock")):
        assert _run("run", cfg, "-o", out) == cli.EXIT_CONFIG
    assert "in use" in capsys.readouterr().err


def test_inspect_round_trip_and_truncation(tmp_path, capsys):
    b = PathBundle(np.arange(24.0).reshape(2, 4, 3), 0.25, seed=11)
    write_bundle(tmp_path / "b.rtci", b)
    assert _run("inspect", tmp_path / "b.rtci") == 0
    out = capsys.readouterr().out
    assert "dim 3  steps 3  paths 2  dt 0.25  seed 11" in out
    assert "coordinate 0: mean 15 " in out
    raw = (tmp_path / "b.rtci").read_bytes()
    (tmp_path / "t.rtci").write_bytes(raw[:-5])
    assert _run("inspect", tmp_path / "t.rtci") == cli.EXIT_CONFIG
    assert "truncated" in capsys.readouterr().err


def test_verify_constants_table(tmp_path):
    out = tmp_path / "c.csv"
    assert _run("verify-constants", "--F", "-1", "0", "0.5", "--T", "1", "-o", out) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "F,T,normA,C_closed_form,C_quadrature,abs_diff"
    vals = {float(r.split(",")[0]): float(r.split(",")[3]) for r in rows[1:]}
    assert vals[0.0] == 1.0 and vals[0.5] == pytest.approx(np.e - 1)
    assert all(float(r.split(",")[5]) < 1e-10 for r in rows[1:])


def test_concentration_command(tmp_path, capsys):
    cfg = _write(tmp_path, HALF_LINE.format(M=300))
    out = tmp_path / "tail.csv"
    assert _run("concentration", cfg, "-o", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("scenario,functional,r,count") and len(lines) == 3
    assert _run("concentration", cfg, "--functional", "constant", "--M", "500") == 0


def test_console_script_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rtci.cli", "verify-constants", "--F", "0", "--T", "2"],
                         capture_output=True, text=True, env={**os.environ})  # fmt: skip
    assert res.returncode == 0 and "2.0" in res.stdout
