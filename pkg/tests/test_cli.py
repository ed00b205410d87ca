import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcsurf import cli, storage
from cmcsurf.fields import BETA, WeightedField


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("CMC_OUT_DIR", str(tmp_path / "out"))
    return tmp_path / "out"


def test_config_text_parsing(tmp_path):
    text = "# comment\nbackend = bolza\nn = 48  # trailing\ncontinuation = yes\nT = none\n"
    vals = cli.parse_config_text(text)
    assert vals == {"backend": "bolza", "n": 48, "continuation": True, "T": None}


@pytest.mark.parametrize("text,msg", [
    ("n = 3\nfoo = 1\n", ":2: unknown key 'foo'"),
    ("n = x\n", ":1: key 'n': expected int"),
    ("c = nan\n", "finite"),
    ("c = 0.1\nc = 0.2\n", ":2: duplicate key"),
    ("just words\n", ":1: expected 'key = value'"),
    ("min_eig = maybe\n", "expected bool"),
])
def test_config_errors_name_the_line(text, msg):
    with pytest.raises(cli.ConfigError, match=msg.replace("(", r"\(").replace("'", "'")):
        cli.parse_config_text(text, "cfg")


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("backend = bolza\nn = 48\n")
    cfg = cli.parse_config(p, {"n": "32", "beta": "basis:0:0.1"})
    assert cfg.backend == "bolza" and cfg.n == 32 and cfg.beta == "basis:0:0.1"
    with pytest.raises(cli.ConfigError, match="not found"):
        cli.parse_config(tmp_path / "missing.cfg")
    with pytest.raises(cli.ConfigError, match="flag --max-newton"):
        cli.parse_config(None, {"max_newton": "many"})


_FIELDS = {
    "backend": st.sampled_from(["disk-patch", "torus-patch", "bolza"]),
    "n": st.integers(16, 256),
    "c": st.floats(-0.99, 0.99, allow_nan=False),
    "r0": st.floats(0.01, 0.8),
    "seed": st.integers(0, 2 ** 31),
    "continuation": st.booleans(),
    "T": st.one_of(st.none(), st.floats(1e-3, 1e3)),
    "tol_grad": st.floats(1e-14, 1e-2),
    "beta": st.sampled_from(["zero", "constant:0.1+0.2i", "basis:0:0.3,basis:2:-0.1i"]),
}


@settings(max_examples=60, deadline=None)
@given(st.fixed_dictionaries({}, optional=_FIELDS))
def test_canonical_config_round_trips(values):
    cfg = cli.ProblemConfig(**values)
    text = cfg.canonical()
    again = cli.ProblemConfig(**cli.parse_config_text(text))
    assert again == cfg
    assert again.canonical() == text


@pytest.mark.parametrize("spec,want", [
    ("zero", ("zero",)),
    ("constant:0.2-0.1i", ("constant", 0.2 - 0.1j)),
    ("file:/tmp/x.fld", ("file", "/tmp/x.fld")),
    ("basis:0:0.3, basis:2:0.1i", ("basis", {0: 0.3, 2: 0.1j})),
    ("basis:1:1,basis:1:2", ("basis", {1: 3})),
])
def test_beta_spec(spec, want):
    assert cli.parse_beta_spec(spec) == want


@pytest.mark.parametrize("spec,msg", [
    ("basis:x:1", "basis index 'x'"),
    ("basis:5:1", "must be 0, 1 or 2"),
    ("basis:0:abc", "malformed complex"),
    ("basis:0", "malformed basis term"),
    ("sphere", "unrecognised"),
])
def test_beta_spec_errors(spec, msg):
    with pytest.raises(cli.ConfigError, match=msg):
        cli.parse_beta_spec(spec)


def test_gauge_spec():
    assert cli.parse_gauge_spec("none") == ("none",)
    assert cli.parse_gauge_spec("basis:1:0.3") == ("basis", 1, 0.3)
    assert cli.parse_gauge_spec("smooth:0.05") == ("smooth", 0.05)
    with pytest.raises(cli.ConfigError):
        cli.parse_gauge_spec("smooth:x")


@pytest.mark.parametrize("over,command,msg", [
    ({"backend": "sphere"}, "solve", "backend"),
    ({"c": "1.5"}, "solve", r"\|c\| < 1"),
    ({"k": "0", "c": "0"}, "solve", "must be negative"),
    ({"k": "2"}, "solve", "k must be"),
    ({"init": "ones"}, "solve", "init"),
    ({"mutant": "bogus"}, "check", "mutant"),
    ({"backend": "bolza"}, "solve-constrained", "target volume"),
    ({"T": "1"}, "solve-constrained", "closed surface"),
    ({"stop": "1.2"}, "sweep", "lambda"),
    ({"axis": "q"}, "sweep", "axis"),
    ({"which": "gauss-bonnet"}, "check", "closed surface"),
    ({"which": "mms", "backend": "bolza"}, "check", "disk patch"),
    ({"which": "bochner"}, "check", "closed surface"),
    ({"which": "gauge", "backend": "torus-patch"}, "check", "no solvable|solvable"),
])
def test_validation(over, command, msg):
    cfg = cli.parse_config(None, over)
    with pytest.raises(cli.ConfigError, match=msg):
        cli.validate(cfg, command)


def test_exit_code_for_config_error(out, capsys):
    assert cli.main(["solve", "--c", "2"]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["solve", "--backend", "disk-patch", "--beta", "basis:0:0.1"]) == 2
    assert cli.main(["solve", "--backend", "bolza", "--n", "16"]) == 2


def test_print_config(capsys):
    assert cli.main(["solve", "--n", "48", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "n = 48\n" in text
    assert cli.ProblemConfig(**cli.parse_config_text(text)).n == 48


def test_info_lists_defaults(capsys):
    assert cli.main(["info"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["solver_defaults"]["tol_grad"] == 1e-10
    assert info["exit_codes"]["3"].startswith("solver divergence")
    assert set(info["checks"]) >= {"gradient", "gauss-bonnet", "bochner"}


def test_solve_disk_writes_artifacts(out, capsys):
    assert cli.main(["solve", "--n", "32", "--beta", "constant:0.2", "--c", "0.5"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"u.fld", "F.fld", "B.fld", "alpha.fld", "rho_h.fld", "fields.csv", "trace.csv",
            "chart.cmc", "chart.cmc.json", "report.json", "manifest.json"} <= names
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "ok" and "wall_time" not in report
    assert set(report["summary"]) == set(cli.SUMMARY_KEYS)
    assert report["min_eig"]["value"] > 0
    chart = storage.load_chart(out / "chart.cmc")
    u = storage.load_field(out / "u.fld", chart)
    assert u.real and np.max(np.abs(u.values)) < 1
    man = json.loads((out / "manifest.json").read_text())
    for name, digest in man["files"].items():
        assert storage.sha256_file(out / name) == digest["sha256"]
    with open(out / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["step"] == "0" and "negative_curvature" in rows[0]


def test_solve_trivial_disk_from_spec(out, capsys):
    assert cli.main(["solve", "--backend", "disk-patch", "--n", "64", "--k", "-1", "--c", "0",
                     "--beta", "zero", "--min-eig", "false"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["total"] == pytest.approx(0.0, abs=1e-12)
    assert report["min_eig"] is None


def test_solve_timing_opt_in(out):
    assert cli.main(["solve", "--n", "16", "--timing", "true", "--min-eig", "false"]) == 0
    assert json.loads((out / "report.json").read_text())["wall_time"] >= 0


def test_solve_torus_diverges_with_hint(out, capsys):
    assert cli.main(["solve", "--backend", "torus-patch", "--n", "16"]) == 3
    assert "Gauss-Bonnet" in capsys.readouterr().err
    assert json.loads((out / "report.json").read_text())["status"] == "diverged"


def test_residual_threshold_exit(out, capsys):
    code = cli.main(["solve", "--n", "16", "--beta", "constant:0.3", "--max-r-gauss", "1e-30",
                     "--min-eig", "false"])
    assert code == 4
    assert json.loads((out / "report.json").read_text())["status"] == "residual-threshold"


def test_solve_bolza_gauge_and_continuation(out, capsys):
    assert cli.main(["solve", "--backend", "bolza", "--n", "32", "--beta", "basis:0:0.3",
                     "--gauge", "basis:1:0.2", "--continuation", "true", "--steps", "3",
                     "--min-eig", "false"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["continuation"]["t"][-1] == 1.0


def test_beta_from_file(out, tmp_path, disk16):
    p = storage.dump_field(WeightedField(np.full(disk16.size, 0.2 + 0j), BETA, disk16),
                           tmp_path / "b.fld", "b")
    assert cli.main(["solve", "--n", "16", "--beta", f"file:{p}", "--min-eig", "false"]) == 0
    assert cli.main(["solve", "--n", "32", "--beta", f"file:{p}"]) == 2


def test_solve_constrained(out, capsys):
    assert cli.main(["solve-constrained", "--backend", "bolza", "--n", "32",
                     "--T", str(8 * math.pi), "--min-eig", "false"]) == 0
    lam = json.loads((out / "report.json").read_text())["lambda_recovered"]
    assert lam == pytest.approx(-0.5, abs=5e-3)


def test_sweep_over_c(out, capsys):
    assert cli.main(["sweep", "--n", "16", "--start", "0", "--stop", "0.9", "--points", "4",
                     "--min-eig", "false"]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["param"]) for r in rows] == pytest.approx([0, 0.3, 0.6, 0.9])
    assert all(r["converged"] == "True" for r in rows)
    lam = [float(r["lambda"]) for r in rows]
    assert lam == pytest.approx([-1 + c * c for c in (0, 0.3, 0.6, 0.9)])


def test_sweep_over_beta_scale(out):
    assert cli.main(["sweep", "--n", "16", "--axis", "beta-scale", "--beta", "constant:0.3",
                     "--start", "0", "--stop", "1", "--points", "3", "--min-eig", "false"]) == 0


def test_sweep_failures_exit_3(out):
    assert cli.main(["sweep", "--backend", "torus-patch", "--n", "16", "--points", "2",
                     "--stop", "0.5", "--min-eig", "false"]) == 3


@pytest.mark.parametrize("which", ["gradient", "hessian", "gauge", "mms"])
def test_check_single_audits_disk(which, out, capsys):
    assert cli.main(["check", which, "--n", "32", "--trials", "2"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["passed"] and man["checks"]


def test_check_bolza_audits(out, capsys):
    assert cli.main(["check", "gauss-bonnet", "--backend", "bolza", "--n", "32"]) == 0
    assert cli.main(["check", "bochner", "--backend", "torus-patch", "--n", "16"]) == 0
    assert "PASS bochner_identity" in capsys.readouterr().out


@pytest.mark.parametrize("mutant,which,backend", [
    ("volume_sign", "gradient", "disk-patch"),
    ("hessian_cross_sign", "hessian", "disk-patch"),
    ("curvature_sign", "gauss-bonnet", "bolza"),
])
def test_check_detects_mutants(mutant, which, backend, out, capsys):
    # a nonzero class so the curvature term sees a nontrivial conformal factor
    beta = "basis:0:0.3" if backend == "bolza" else "constant:0.3"
    args = ["check", which, "--backend", backend, "--n", "32", "--trials", "2", "--beta", beta]
    assert cli.main(args + ["--mutant", mutant]) == 5
    assert "FAIL" in capsys.readouterr().out
    # mutation is undone afterwards
    assert cli.main(args) == 0


def test_check_all_disk(out, capsys):
    assert cli.main(["check", "all", "--n", "32", "--trials", "2"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert sum(c["passed"] for c in man["checks"]) >= 6


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "cmcsurf", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.strip()
