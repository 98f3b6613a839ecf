"""Command line entry point: config parsing, pipelines, CSV/text artifacts.

Config files are flat ``key = value`` lines with dotted section names;
``#`` starts a comment. Every key must be in SCHEMA.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import bochner_lab as bl
from . import curvature_audit as ca
from . import ma_solver as ms
from . import model_geometry as mg
from . import orbifold_tensors as ot
from .errors import ConekitError, DomainError, ParseError, SchemaViolation, UnsafeTau

SUBCOMMANDS = ("audit-curvature", "solve", "continuation", "tensors", "bochner", "report")


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    s = s.strip()
    if not s:
        return ()
    return tuple(float(eval_fraction(x)) for x in s.split(","))


def eval_fraction(x):
    x = x.strip()
    if "/" in x:
        a, b = x.split("/")
        return Fraction(int(a), int(b))
    return float(x)


def _point(x):
    x = x.strip().replace(" ", "")
    if x.lower() in ("inf", "infinity", "oo"):
        return "inf"
    v = complex(x)
    return v.real if v.imag == 0 else v


def _points(s):
    s = s.strip()
    return tuple(_point(x) for x in s.split(",")) if s else ()


def _normalizer(s):
    s = s.strip()
    return "auto" if s == "auto" else float(s)


def _choice(*opts):
    def conv(s):
        v = s.strip()
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return v

    return conv


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


# key -> (converter, default)
SCHEMA = {
    "tau": (float, 0.5),
    "lambda": (int, 0),
    "normalizer": (_normalizer, "auto"),
    "seed": (int, 0),
    "allow_unsafe_tau": (_bool, False),
    "model.kind": (_choice("sphere", "local"), "sphere"),
    "model.dimension": (_positive_int, 1),
    "factors.points": (_points, ()),
    "factors.taus": (_floats, ()),
    "factors.weights": (_floats, ()),
    "grid.resolution": (_positive_int, 256),
    "epsilon.schedule": (_floats, ms.DEFAULT_SCHEDULE),
    "epsilon.value": (float, 1e-2),
    "solver.tol": (float, 1e-8),
    "solver.max_iter": (_positive_int, 50),
    "solver.damping": (float, 1.0),
    "output.dir": (str, "conekit-out"),
    "output.record_timing": (_bool, True),
    "audit.epsilons": (_floats, (1e-1, 1e-2, 1e-3, 1e-4)),
    "audit.samples": (_positive_int, 20),
    "audit.n_directions": (_positive_int, 64),
    "audit.cap": (float, 10.0),
    "tensors.max_degree": (int, 6),
    "tensors.max_points": (int, 6),
    "bochner.r": (int, 2),
    "bochner.s": (int, 0),
    "bochner.epsilons": (_floats, (0.5, 1 / 3, 0.25)),
    "bochner.naive_epsilons": (_floats, (1e-1, 1e-2, 1e-3)),
    "problem.f": (_choice("poisson", "zero"), "poisson"),
}


@dataclass
class RunConfig:
    values: dict
    explicit: set = field(default_factory=set)
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self):
        """Stable text form of the fully resolved config (hash input)."""
        lines = []
        for k in sorted(self.values):
            lines.append(f"{k} = {self.values[k]!r}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def taus(self):
        n = len(self["factors.points"]) if self["model.kind"] == "sphere" else len(self["factors.taus"]) or self["model.dimension"]
        if self["factors.taus"]:
            return tuple(self["factors.taus"])
        return (self["tau"],) * n

    def geometry(self):
        """The ConeDivisorConfig described by the file."""
        unsafe = self["allow_unsafe_tau"]
        if self["model.kind"] == "sphere":
            pts = self["factors.points"]
            if self["factors.taus"] and len(self["factors.taus"]) != len(pts):
                raise SchemaViolation("factors.taus needs one value per point", "factors.taus")
            norm = self["normalizer"]
            if not pts and norm == "auto":
                norm = 1.0
            return mg.sphere_config(pts, list(self.taus), normalizer=norm, allow_unsafe_tau=unsafe)
        n = self["model.dimension"]
        taus = self.taus
        if len(taus) > n:
            raise SchemaViolation("more factors than coordinates", "factors.taus")
        ws = self["factors.weights"] or (0.0,) * len(taus)
        if len(ws) != len(taus):
            raise SchemaViolation("factors.weights needs one value per factor", "factors.weights")
        weights = []
        for j, w in enumerate(ws):
            A = np.eye(n) * w
            A[j, j] = 0.0
            weights.append(mg.QuadraticWeight(A))
        return mg.local_config(taus, weights=weights, dimension=n, normalizer=self["normalizer"],
                               allow_unsafe_tau=unsafe)

    def pair(self):
        ws = []
        for t in self.taus:
            a = Fraction(1) - Fraction(t).limit_denominator(10**6)
            ws.append(a)
        return ot.OrbifoldPairP1(tuple(self["factors.points"]), tuple(ws))


def parse_text(text, source="<string>", allow_unsafe_tau=False) -> RunConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, val = (p.strip() for p in body.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        if key not in SCHEMA:
            raise SchemaViolation(f"{source}:{lineno}: unknown key {key!r}", key)
        if key in raw:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (lineno, val)
    values = {}
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            lineno, val = raw[key]
            try:
                values[key] = conv(val)
            except (ValueError, ZeroDivisionError) as exc:
                raise SchemaViolation(f"{source}:{lineno}: bad value for {key!r}: {exc}", key) from None
        else:
            values[key] = default
    if allow_unsafe_tau:
        values["allow_unsafe_tau"] = True
    cfg = RunConfig(values, set(raw), source)
    if values["lambda"] not in (0, 1):
        raise SchemaViolation("lambda must be 0 or 1", "lambda")
    for t in cfg.taus:
        if not 0.0 < t < 1.0:
            raise SchemaViolation(f"tau = {t} outside (0, 1)", "tau")
        if t > 0.5 and not values["allow_unsafe_tau"]:
            raise UnsafeTau(f"tau = {t} > 1/2 needs --allow-unsafe-tau")
    return cfg


def load_config(path, allow_unsafe_tau=False) -> RunConfig:
    text = Path(path).read_text()
    return parse_text(text, str(path), allow_unsafe_tau)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x) + 0.0, ".17g")  # + 0.0 folds -0 into 0
    if isinstance(x, complex):
        return format(x.real, ".17g") + ("+" if x.imag >= 0 else "-") + format(abs(x.imag), ".17g") + "j"
    if isinstance(x, tuple):
        return ";".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            w.writerow([_fmt(v) for v in row])


def emit_trace(trace: ms.EstimateTrace, path):
    write_csv(path, ms.TRACE_COLUMNS, trace.rows)


def read_trace(path) -> ms.EstimateTrace:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != ms.TRACE_COLUMNS:
            raise ParseError(f"{path}: unexpected trace header")
        rows = []
        for rec in rd:
            row = {}
            for k, v in zip(header, rec):
                row[k] = int(v) if k == "newton_iters" else float(v)
            rows.append(row)
    return ms.EstimateTrace(rows)


def _versions():
    return {
        "conekit": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(out, subcommand, cfg: RunConfig, artifacts, wall_ms, status):
    man = {
        "subcommand": subcommand,
        "config_hash": cfg.hash,
        "config_source": os.path.basename(cfg.source),
        "versions": _versions(),
        "wall_ms": wall_ms,
        "artifacts": sorted(os.path.basename(a) for a in artifacts),
        "exit_code": status,
    }
    path = os.path.join(out, f"manifest-{subcommand}.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def worker_count():
    raw = os.environ.get("CONEKIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise SchemaViolation(f"CONEKIT_THREADS={raw!r} is not an integer", "CONEKIT_THREADS") from None
    if n < 1:
        raise SchemaViolation("CONEKIT_THREADS must be >= 1", "CONEKIT_THREADS")
    return n


# ---------------------------------------------------------------------------
# pipelines; each returns (status, artifact paths)
# ---------------------------------------------------------------------------

def _params(cfg):
    return ms.SolverParams(tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"], damping=cfg["solver.damping"])


def _problem(cfg):
    geo = cfg.geometry()
    return ms.assemble_problem(geo, cfg["lambda"], resolution=cfg["grid.resolution"], f=cfg["problem.f"])


def run_solve(cfg, out, epsilon=None):
    prob = _problem(cfg)
    eps = cfg["epsilon.value"] if epsilon is None else float(epsilon)
    trace, last = ms.continuation_run(prob, [eps], _params(cfg), record_timing=cfg["output.record_timing"])
    path = os.path.join(out, "trace.csv")
    emit_trace(trace, path)
    dumps = ms.dump_field(last, os.path.join(out, "phi"))
    return 0, [path, *dumps]


def run_continuation(cfg, out, epsilon=None):
    prob = _problem(cfg)
    sched = list(cfg["epsilon.schedule"])
    if epsilon is not None:
        sched = [e for e in sched if e > epsilon] + [float(epsilon)]
    trace, last = ms.continuation_run(prob, sched, _params(cfg), record_timing=cfg["output.record_timing"])
    path = os.path.join(out, "trace.csv")
    emit_trace(trace, path)
    dumps = ms.dump_field(last, os.path.join(out, "phi"))
    return 0, [path, *dumps]


BOUND_COLUMNS = ("epsilon", "point", "index_tuple", "weighted_value", "cap", "pass")
BISEC_COLUMNS = ("epsilon", "min_bisec", "successive_ratio", "symmetry_defect", "pass")


def run_audit(cfg, out, epsilon=None):
    geo = cfg.geometry()
    eps_list = list(cfg["audit.epsilons"]) if epsilon is None else [float(epsilon)]
    samples = ca.audit_sample_set(geo, cfg["audit.samples"])
    mins, defects = [], []
    for e in eps_list:
        lo, worst = np.inf, 0.0
        for pt in samples:
            s = ca.curvature_tensor(geo, pt, e)
            lo = min(lo, ca.bisectional_from_tensor(s.riemann, s.g, cfg["audit.n_directions"], cfg["seed"]))
            worst = max(worst, *ca.symmetry_defects(s))
        mins.append(lo)
        defects.append(worst)
    rows, ok_all = [], True
    prev = None
    for e, lo, d in zip(eps_list, mins, defects):
        ratio = float("nan")
        ok = d <= 1e-8
        if prev is not None and prev < 0 and lo < 0:
            ratio = lo / prev
            ok = ok and 0.5 <= ratio <= 2.0
        prev = lo
        ok_all &= ok
        rows.append((e, lo, ratio, d, ok))
    arts = [os.path.join(out, "bisectional.csv")]
    write_csv(arts[0], BISEC_COLUMNS, rows)
    if geo.model_kind == "local" and geo.factors:
        brows = []
        if geo.dimension >= 2:
            rep = ca.weighted_offdiagonal_sup(geo, samples, eps_list, cap=cfg["audit.cap"])
            brows += rep.rows
            ok_all &= rep.passed
        d = np.ones(geo.dimension, dtype=complex) / np.sqrt(geo.dimension)
        rep = ca.diagonal_lower_bound(geo, (d, np.geomspace(1e-3, 0.9, 12)), eps_list, cap=cfg["audit.cap"])
        brows += rep.rows
        ok_all &= rep.passed
        arts.append(os.path.join(out, "bounds.csv"))
        write_csv(arts[-1], BOUND_COLUMNS, brows)
    return (0 if ok_all else 4), arts


TENSOR_COLUMNS = ("pair_id", "r", "s", "degree", "h0", "oracle_h0", "match")


def _tensor_rows(args):
    pid, pair, max_degree = args
    rows = []
    for r in range(max_degree + 1):
        for s in range(max_degree + 1 - r):
            h0 = ot.h0_dimension_p1(pair, r, s)
            orc = ot.h0_monomial_count(pair, r, s)
            rows.append((pid, r, s, ot.line_bundle_degree(pair, r, s), h0, orc, h0 == orc))
    return rows


def _pair_id(pair):
    pts = ",".join(_fmt(p) if p != "inf" else "inf" for p in pair.points)
    ws = ",".join(str(w) for w in pair.weights)
    return f"[{pts}|{ws}]"


def run_tensors(cfg, out, epsilon=None):
    if cfg["factors.points"]:
        pairs = [cfg.pair()]
    else:
        pairs = ot.fixture_family(cfg["tensors.max_points"])
    jobs = [(_pair_id(p), p, cfg["tensors.max_degree"]) for p in pairs]
    n = worker_count()
    if n > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n) as ex:
            chunks = list(ex.map(_tensor_rows, jobs))
    else:
        chunks = [_tensor_rows(j) for j in jobs]
    rows = [r for c in chunks for r in c]
    path = os.path.join(out, "tensors.csv")
    write_csv(path, TENSOR_COLUMNS, rows)
    return (0 if all(r[-1] for r in rows) else 4), [path]


def run_bochner(cfg, out, epsilon=None):
    geo = cfg.geometry()
    if geo.model_kind != "sphere" or not geo.factors:
        raise DomainError("bochner runs need sphere cone points")
    pair = cfg.pair()
    tensor, _ = bl.trial_tensor(pair, cfg["bochner.r"], cfg["bochner.s"])
    metric = bl.cone_metric(geo)
    eps = list(cfg["bochner.epsilons"]) if epsilon is None else [float(epsilon)]
    dec = bl.truncation_error_integral(tensor, metric, geo, eps)
    naive = bl.naive_cutoff_integral(tensor, metric, geo, cfg["bochner.naive_epsilons"])
    arts = [os.path.join(out, "decay.csv"), os.path.join(out, "decay_naive.csv")]
    write_csv(arts[0], bl.DECAY_COLUMNS, dec.rows())
    write_csv(arts[1], bl.DECAY_COLUMNS, naive.rows())
    ok = dec.passed and naive.passed and (len(eps) < 2 or dec.fit_slope <= -0.45)
    return (0 if ok else 4), arts


SUMMARY_COLUMNS = ("artifact", "rows", "passed")


def run_report(cfg, out, epsilon=None):
    rows = []
    for p in sorted(Path(out).glob("*.csv")):
        if p.name == "summary.csv":
            continue
        with open(p, newline="") as fh:
            recs = list(csv.DictReader(fh))
        flag = "na"
        for col in ("pass", "match"):
            if recs and col in recs[0]:
                flag = "true" if all(r[col] == "true" for r in recs) else "false"
        rows.append((p.name, len(recs), flag))
    path = os.path.join(out, "summary.csv")
    write_csv(path, SUMMARY_COLUMNS, rows)
    return (4 if any(r[2] == "false" for r in rows) else 0), [path]


PIPELINES = {
    "audit-curvature": run_audit,
    "solve": run_solve,
    "continuation": run_continuation,
    "tensors": run_tensors,
    "bochner": run_bochner,
    "report": run_report,
}


def run(subcommand, cfg: RunConfig, out=None, epsilon=None):
    """Execute one pipeline; returns (exit status, artifact paths incl. the manifest)."""
    if subcommand not in PIPELINES:
        raise DomainError(f"unknown subcommand {subcommand!r}")
    out = out or cfg["output.dir"]
    os.makedirs(out, exist_ok=True)
    worker_count()
    t0 = time.perf_counter()
    status, arts = PIPELINES[subcommand](cfg, out, epsilon)
    wall = (time.perf_counter() - t0) * 1e3 if cfg["output.record_timing"] else 0.0
    arts.append(write_manifest(out, subcommand, cfg, arts, wall, status))
    return status, arts


def build_parser():
    ap = argparse.ArgumentParser(prog="conekit", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--epsilon", type=float, default=None)
    ap.add_argument("--allow-unsafe-tau", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, allow_unsafe_tau=args.allow_unsafe_tau)
        status, arts = run(args.subcommand, cfg, args.out, args.epsilon)
    except ConekitError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        key = getattr(exc, "key", None)
        if key:
            err["key"] = key
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc), "exit_code": 2}), file=sys.stderr)
        return 2
    for a in arts:
        print(a)
    return status


if __name__ == "__main__":
    sys.exit(main())
