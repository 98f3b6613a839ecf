import csv
import json
import math

import numpy as np
import pytest

from conekit import cli_runner as cli
from conekit import ma_solver as ms
from conekit.errors import ParseError, SchemaViolation, UnsafeTau

FOUR_HALF = "factors.points = 0, inf, 1, -1\nlambda = 0\n"
EMPTY = "lambda = 0\nproblem.f = zero\ngrid.resolution = 48\noutput.record_timing = false\n"
FIVE = (
    "lambda = 1\n"
    "factors.points = 0, inf, 1, -0.5+0.8660254037844386j, -0.5-0.8660254037844386j\n"
    "grid.resolution = 48\noutput.record_timing = false\n"
)


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config_fills_defaults():
    cfg = cli.parse_text(FOUR_HALF)
    assert cfg["factors.points"] == (0.0, "inf", 1.0, -1.0)
    assert cfg.taus == (0.5,) * 4
    assert cfg["grid.resolution"] == 256
    assert cfg["epsilon.schedule"] == ms.DEFAULT_SCHEDULE
    assert cfg["solver.tol"] == 1e-8
    assert cfg.explicit == {"factors.points", "lambda"}
    geo = cfg.geometry()
    assert len(geo.factors) == 4


def test_comments_fractions_and_hash():
    a = cli.parse_text("# header\nfactors.points = 0, inf  # two\nfactors.taus = 1/2, 1/3\n")
    assert a.taus == (0.5, 1 / 3)
    b = cli.parse_text("factors.taus = 0.5, 0.3333333333333333\nfactors.points = 0,inf\n")
    assert a.hash == b.hash
    assert a.hash != cli.parse_text(FOUR_HALF).hash


def test_unknown_key_names_it():
    with pytest.raises(SchemaViolation) as info:
        cli.parse_text("tua = 0.5\n")
    assert info.value.key == "tua"
    assert "tua" in str(info.value)


def test_unsafe_tau_gate():
    with pytest.raises(UnsafeTau):
        cli.parse_text("tau = 0.8\nfactors.points = 0, inf\n")
    cfg = cli.parse_text("tau = 0.8\nfactors.points = 0, inf\n", allow_unsafe_tau=True)
    assert cfg.taus == (0.8, 0.8)


@pytest.mark.parametrize(
    "text,exc,key",
    [
        ("no equals sign\n", ParseError, None),
        ("= 3\n", ParseError, None),
        ("seed = 1\nseed = 2\n", ParseError, None),
        ("grid.resolution = 0\n", SchemaViolation, "grid.resolution"),
        ("output.record_timing = maybe\n", SchemaViolation, "output.record_timing"),
        ("model.kind = torus\n", SchemaViolation, "model.kind"),
        ("lambda = 2\n", SchemaViolation, "lambda"),
        ("tau = 1.5\nfactors.points = 0\n", SchemaViolation, "tau"),
        ("factors.taus = 1/0\n", SchemaViolation, "factors.taus"),
    ],
)
def test_bad_files(text, exc, key):
    with pytest.raises(exc) as info:
        cli.parse_text(text)
    if key is not None:
        assert info.value.key == key


def test_load_config_reports_path_and_line(tmp_path):
    path = _write(tmp_path, "seed = 1\nbogus\n")
    with pytest.raises(ParseError, match=r"run\.cfg:2"):
        cli.load_config(path)


def test_geometry_mismatch_is_schema_error():
    cfg = cli.parse_text("factors.points = 0, inf\nfactors.taus = 0.5\n")
    with pytest.raises(SchemaViolation):
        cfg.geometry()


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def _row(eps):
    row = {c: 0.0 for c in ms.TRACE_COLUMNS}
    row.update(epsilon=eps, newton_iters=3, osc_rho=1 / 3, A_max=math.pi, A_min=-0.0)
    return row


def test_empty_trace_is_header_only(tmp_path):
    p = tmp_path / "t.csv"
    cli.emit_trace(ms.EstimateTrace([]), p)
    assert p.read_text() == ",".join(ms.TRACE_COLUMNS) + "\n"
    assert cli.read_trace(p).rows == []


def test_one_row_trace(tmp_path):
    p = tmp_path / "t.csv"
    cli.emit_trace(ms.EstimateTrace([_row(0.1)]), p)
    lines = p.read_text().splitlines()
    assert len(lines) == 2
    rec = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert rec["osc_rho"] == "0.33333333333333331"
    assert rec["A_max"] == "3.1415926535897931"
    assert rec["A_min"] == "0"
    assert rec["newton_iters"] == "3"


def test_trace_roundtrip_and_byte_identical_rewrite(tmp_path):
    tr = ms.EstimateTrace([_row(e) for e in (1.0, 0.3, 1e-3)])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.emit_trace(tr, a)
    back = cli.read_trace(a)
    assert back.rows == tr.rows
    cli.emit_trace(back, b)
    assert a.read_bytes() == b.read_bytes()


def test_read_trace_rejects_wrong_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("epsilon,foo\n1,2\n")
    with pytest.raises(ParseError):
        cli.read_trace(p)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def test_solve_empty_divisor(tmp_path):
    cfg = cli.parse_text(EMPTY, "empty.cfg")
    status, arts = cli.run("solve", cfg, str(tmp_path))
    assert status == 0
    tr = cli.read_trace(tmp_path / "trace.csv")
    assert len(tr.rows) == 1 and tr.rows[0]["osc_rho"] == 0.0
    for name in ("phi_N.txt", "phi_S.txt"):
        body = (tmp_path / name).read_text().splitlines()[2:]
        assert np.all(np.array([[float(x) for x in r.split()] for r in body]) == 0.0)
    man = json.loads((tmp_path / "manifest-solve.json").read_text())
    assert man["config_hash"] == cfg.hash
    assert man["exit_code"] == 0 and man["wall_ms"] == 0.0
    assert set(man["versions"]) == {"conekit", "numpy", "scipy", "python"}
    assert man["artifacts"] == ["phi_N.txt", "phi_S.txt", "trace.csv"]
    assert arts[-1].endswith("manifest-solve.json")


def test_solve_is_byte_deterministic(tmp_path):
    cfg = cli.parse_text(EMPTY.replace("problem.f = zero\n", "factors.points = 0, inf, 1, -1\n"))
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        cli.run("solve", cfg, str(d), epsilon=0.1)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]


@pytest.mark.slow
def test_continuation_five_points(tmp_path):
    status, _ = cli.run("continuation", cli.parse_text(FIVE), str(tmp_path))
    assert status == 0
    with open(tmp_path / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7
    assert [float(r["epsilon"]) for r in rows] == list(ms.DEFAULT_SCHEDULE)


def test_continuation_epsilon_override(tmp_path):
    cfg = cli.parse_text(EMPTY + "epsilon.schedule = 1, 0.3, 0.1, 0.03\n")
    cli.run("continuation", cfg, str(tmp_path), epsilon=0.2)
    eps = [r["epsilon"] for r in cli.read_trace(tmp_path / "trace.csv").rows]
    assert eps == [1.0, 0.3, 0.2]


def test_tensors_family_all_match(tmp_path):
    cfg = cli.parse_text("tensors.max_points = 3\ntensors.max_degree = 4\n")
    status, _ = cli.run("tensors", cfg, str(tmp_path))
    assert status == 0
    with open(tmp_path / "tensors.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["match"] == "true" for r in rows)
    assert list(rows[0]) == list(cli.TENSOR_COLUMNS)


def test_tensors_parallel_equals_serial(tmp_path, monkeypatch):
    cfg = cli.parse_text("tensors.max_points = 2\ntensors.max_degree = 3\n")
    cli.run("tensors", cfg, str(tmp_path / "a"))
    monkeypatch.setenv("CONEKIT_THREADS", "2")
    cli.run("tensors", cfg, str(tmp_path / "b"))
    assert (tmp_path / "a" / "tensors.csv").read_bytes() == (tmp_path / "b" / "tensors.csv").read_bytes()


@pytest.mark.parametrize("raw", ["zero", "0", "-3"])
def test_thread_env_validation(monkeypatch, raw):
    monkeypatch.setenv("CONEKIT_THREADS", raw)
    with pytest.raises(SchemaViolation) as info:
        cli.worker_count()
    assert info.value.key == "CONEKIT_THREADS"


def test_audit_local_writes_tables(tmp_path):
    cfg = cli.parse_text(
        "model.kind = local\nmodel.dimension = 1\nfactors.taus = 0.5\n"
        "audit.epsilons = 1e-1, 1e-2\naudit.samples = 6\n"
    )
    status, arts = cli.run("audit-curvature", cfg, str(tmp_path))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["bisectional.csv", "bounds.csv", "manifest-audit-curvature.json"]
    with open(tmp_path / "bisectional.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(float(r["symmetry_defect"]) <= 1e-8 for r in rows)
    assert status in (0, 4)


def test_report_aggregates(tmp_path):
    cli.write_csv(tmp_path / "x.csv", ("a", "pass"), [(1, True), (2, True)])
    cli.write_csv(tmp_path / "y.csv", ("a", "match"), [(1, False)])
    cli.write_csv(tmp_path / "z.csv", ("a",), [(1,)])
    status, _ = cli.run("report", cli.parse_text(""), str(tmp_path))
    assert status == 4
    with open(tmp_path / "summary.csv", newline="") as fh:
        rows = [tuple(r.values()) for r in csv.DictReader(fh)]
    assert rows == [("x.csv", "2", "true"), ("y.csv", "1", "false"), ("z.csv", "1", "na")]


# ---------------------------------------------------------------------------
# main / exit codes
# ---------------------------------------------------------------------------

def test_main_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert cli.main(["solve", "--config", _write(tmp_path, EMPTY), "--out", out]) == 0
    capsys.readouterr()

    assert cli.main(["solve", "--config", _write(tmp_path, "tua = 0.5\n", "bad.cfg"), "--out", out]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err == {"error": "SchemaViolation", "message": err["message"], "exit_code": 2, "key": "tua"}

    assert cli.main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()

    unsafe = _write(tmp_path, "tau = 0.8\nfactors.points = 0\nmodel.kind = local\n", "u.cfg")
    assert cli.main(["tensors", "--config", unsafe, "--out", out]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UnsafeTau"

    diverge = _write(tmp_path, FIVE + "solver.max_iter = 1\nsolver.tol = 1e-30\n", "nc.cfg")
    assert cli.main(["solve", "--config", diverge, "--out", out, "--epsilon", "0.1"]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "NoConvergence"


def test_main_audit_failure_code(tmp_path, capsys):
    # a one-factor tau above 1/2 breaks the diagonal bound, so the audit exits 4
    text = "model.kind = local\nfactors.taus = 0.75\naudit.samples = 4\naudit.epsilons = 1e-1, 1e-2, 1e-3, 1e-4\n"
    path = _write(tmp_path, text)
    assert cli.main(["audit-curvature", "--config", path, "--out", str(tmp_path), "--allow-unsafe-tau"]) == 4
