import csv
import io
import json
import math
import re
from pathlib import Path

import pytest
from _support import closed_forms

from scnoise import errors
from scnoise.cli import EXIT_CODES, EXIT_TABLE, exit_code_for, main, parse_sweep, sig9

ROOT = Path(__file__).resolve().parents[1]
CIRCUITS = ROOT / "circuits"
GOLDEN = Path(__file__).parent / "golden"
SC_NET = str(CIRCUITS / "sc_amplifier.net")
SC_PLAN = str(CIRCUITS / "sc_amplifier.plan.json")
TH_NET = str(CIRCUITS / "track_hold.net")
TH_PLAN = str(CIRCUITS / "track_hold.plan.json")
RC_NET = str(CIRCUITS / "rc.net")


def run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


def key_paths(doc, prefix=""):
    """Sorted set of field paths; list items collapse to ``[]``."""
    paths = set()
    if isinstance(doc, dict):
        for k, v in doc.items():
            p = f"{prefix}.{k}" if prefix else k
            paths.add(p)
            paths |= key_paths(v, p)
    elif isinstance(doc, list):
        for item in doc:
            paths |= key_paths(item, prefix + "[]")
    return paths


def data_rows(text):
    return list(csv.reader(io.StringIO("".join(l + "\n" for l in text.splitlines() if not l.startswith("#")))))


# ---- golden schema ------------------------------------------------------------

def test_golden_sweep_header(capsys):
    rc, out, _ = run(["sweep", "-n", SC_NET, "-p", SC_PLAN, "--sweep", "c1.value=0.5p",
                      "--sweep", "ota1.gamma=1", "--with", "bode,oracle,mc", "--runs", "1"], capsys)
    assert rc == 0
    header = next(l for l in out.splitlines() if not l.startswith("#")) + "\n"
    assert header.encode() == (GOLDEN / "sweep_header.csv").read_bytes()


@pytest.mark.parametrize("command,argv", [
    ("bode", ["bode", "-n", SC_NET, "-p", SC_PLAN]),
    ("oracle_phase", ["oracle", "-n", SC_NET, "--phase", "2", "--port", "out"]),
    ("oracle_budget", ["oracle", "-n", SC_NET, "-p", SC_PLAN]),
    ("mc", ["mc", "-n", SC_NET, "-p", SC_PLAN, "--runs", "1"]),
])
def test_golden_report_fields(command, argv, capsys):
    rc, out, _ = run(argv, capsys)
    assert rc == 0
    golden = json.loads((GOLDEN / "report_fields.json").read_text())[command]
    assert sorted(key_paths(json.loads(out))) == golden


# ---- bode ------------------------------------------------------------------

def test_bode_total_matches_closed_form(capsys, tmp_path):
    target = tmp_path / "r.json"
    rc, out, _ = run(["bode", "-n", SC_NET, "-p", SC_PLAN, "-o", str(target)], capsys)
    assert rc == 0 and out == ""
    doc = json.loads(target.read_text())
    ref = next(r for r in closed_forms()["sc_amplifier"] if r["c1"] == 5e-13 and r["gamma"] == 1.0)
    assert doc["report"]["total_variance_v2"] == pytest.approx(ref["total_v2"], rel=1e-8)
    assert doc["manifest"]["inputs"][SC_NET]["sha256"]


def test_nine_significant_digits(capsys):
    _, out, _ = run(["bode", "-n", SC_NET, "-p", SC_PLAN], capsys)
    for num in re.findall(r"-?\d\.\d+e[-+]\d+", out):
        assert len(num.split("e")[0].lstrip("-").replace(".", "")) <= 9
    assert sig9(1 / 3) == float("%.9g" % (1 / 3))


def test_temp_k_override(capsys):
    _, a, _ = run(["bode", "-n", SC_NET, "-p", SC_PLAN], capsys)
    _, b, _ = run(["bode", "-n", SC_NET, "-p", SC_PLAN, "--temp-k", "600"], capsys)
    va = json.loads(a)["report"]["total_variance_v2"]
    vb = json.loads(b)["report"]["total_variance_v2"]
    assert vb == pytest.approx(2 * va, rel=1e-8)


def test_missing_plan_file(capsys):
    rc, _, err = run(["bode", "-n", SC_NET, "-p", "/nonexistent/plan.json"], capsys)
    assert rc == EXIT_CODES["FileNotFound"] == 3
    assert "FileNotFound" in err


def test_plan_phase_out_of_range(capsys, tmp_path):
    plan = json.loads(Path(SC_PLAN).read_text())
    plan["contributions"][1]["phase"] = 3
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(plan))
    rc, _, err = run(["bode", "-n", SC_NET, "-p", str(p)], capsys)
    assert rc == EXIT_CODES["PlanInvalid"]


def test_netlist_syntax_error(capsys, tmp_path):
    p = tmp_path / "x.net"
    p.write_text(".ground 0\nQ q1 a b\n")
    rc, _, _ = run(["oracle", "-n", str(p)], capsys)
    assert rc == EXIT_CODES["NetlistSyntax"]


def test_usage_error(capsys):
    assert main(["bode"]) == EXIT_CODES["Usage"]


# ---- oracle / mc ---------------------------------------------------------------

def test_oracle_rc(capsys):
    rc, out, _ = run(["oracle", "-n", RC_NET, "--port", "out,0"], capsys)
    assert rc == 0
    total = json.loads(out)["oracle"]["total_variance_v2"]
    assert total == pytest.approx(1.380649e-23 * 300 / 1e-12, rel=1e-6)


def test_oracle_phase_out_of_range(capsys):
    rc, _, _ = run(["oracle", "-n", SC_NET, "--phase", "3", "--port", "out"], capsys)
    assert rc == EXIT_CODES["PlanInvalid"]


def test_mc_seed_env(capsys, monkeypatch):
    argv = ["mc", "-n", SC_NET, "-p", SC_PLAN, "--runs", "2"]
    monkeypatch.setenv("SCNOISE_SEED", "11")
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv + ["--seed", "11"], capsys)
    monkeypatch.delenv("SCNOISE_SEED")
    _, c, _ = run(argv, capsys)
    da, db, dc = (json.loads(x) for x in (a, b, c))
    assert da["manifest"]["resolved"]["seed"] == 11
    assert dc["manifest"]["resolved"]["seed"] == 0
    assert da["estimate"]["variance"] == db["estimate"]["variance"] != dc["estimate"]["variance"]


def test_mc_coarse_dt(capsys):
    rc, _, _ = run(["mc", "-n", RC_NET, "--port", "out", "--dt", "1e-9", "--runs", "1"], capsys)
    assert rc == EXIT_CODES["TimestepTooCoarse"]


def test_mc_bad_config(capsys):
    rc, _, _ = run(["mc", "-n", RC_NET, "--port", "out", "--periods", "10"], capsys)
    assert rc == EXIT_CODES["ConfigInvalid"]


# ---- sweep -----------------------------------------------------------------

def test_sweep_gain_gamma_twelve_rows(capsys):
    rc, out, _ = run(["sweep", "-n", SC_NET, "-p", SC_PLAN, "--sweep", "c1.value=0.5p,1p,2p,4p",
                      "--sweep", "ota1.gamma=0,1,2", "--with", "bode", "--hold-tset"], capsys)
    assert rc == 0
    rows = data_rows(out)
    assert rows[0] == ["point", "c1.value", "ota1.gamma", "method", "gm_s", "variance_v2", "rms_v", "ci95_rel"]
    body = rows[1:]
    assert len(body) == 12
    refs = {(r["c1"], r["gamma"]): r["total_v2"] for r in closed_forms()["sc_amplifier"]}
    for row in body:
        c1, gamma, var = float(row[1]), float(row[2]), float(row[5])
        assert var == pytest.approx(refs[(c1, gamma)], rel=1e-8)
        assert float(row[6]) == pytest.approx(math.sqrt(var), rel=1e-8)
    assert [int(r[0]) for r in body] == list(range(12))


def test_sweep_load_ratio(capsys):
    rc, out, _ = run(["sweep", "-n", TH_NET, "-p", TH_PLAN, "--sweep", "cl.value=0.125p,0.25p,0.5p,1p",
                      "--sweep", "ota1.gamma=2", "--hold-tset"], capsys)
    assert rc == 0
    refs = {(r["cl"], r["gamma"]): r["total_v2"] for r in closed_forms()["track_hold"]}
    for row in data_rows(out)[1:]:
        assert float(row[5]) == pytest.approx(refs[(float(row[1]), 2.0)], rel=1e-8)


def test_sweep_hold_tset_gm(capsys):
    _, out, _ = run(["sweep", "-n", SC_NET, "-p", SC_PLAN, "--sweep", "c1.value=4p", "--hold-tset"], capsys)
    gm = float(data_rows(out)[1][3])
    assert gm * 5e3 == pytest.approx(0.427, abs=1e-3)


def test_sweep_empty(capsys):
    rc, _, _ = run(["sweep", "-n", SC_NET, "-p", SC_PLAN, "--sweep", "c1.value="], capsys)
    assert rc == EXIT_CODES["SweepEmpty"] == 23
    rc, _, _ = run(["sweep", "-n", SC_NET, "-p", SC_PLAN], capsys)
    assert rc == EXIT_CODES["SweepEmpty"]


def test_sweep_deterministic_order(capsys):
    argv = ["sweep", "-n", SC_NET, "-p", SC_PLAN, "--sweep", "c1.value=0.5p,1p", "--with", "oracle,bode"]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv, capsys)
    assert data_rows(a) == data_rows(b)
    assert [r[2] for r in data_rows(a)[1:]] == ["oracle", "bode", "oracle", "bode"]


def test_parse_sweep():
    assert parse_sweep("c1.value=1p,2p") == ("c1", "value", [1e-12, 2e-12])
    with pytest.raises(ValueError):
        parse_sweep("c1=1p")


# ---- exit table ----------------------------------------------------------------

def _all_errors(cls=errors.ScNoiseError):
    out = [cls]
    for sub in cls.__subclasses__():
        out += _all_errors(sub)
    return out


def test_exit_codes_total_and_distinct():
    codes = set(EXIT_CODES.values())
    assert len(codes) == len(EXIT_TABLE) == len(EXIT_CODES)
    for cls in _all_errors():
        code = exit_code_for(cls.__new__(cls))
        assert code in codes
        if cls is not errors.ScNoiseError:
            assert code != EXIT_CODES["InternalError"], cls.__name__
    assert exit_code_for(RuntimeError("boom")) == EXIT_CODES["InternalError"]


def test_help_lists_exit_codes(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name, code in EXIT_CODES.items():
        assert re.search(rf"\b{code}\b.*{name}", out)
