"""Curvature of omega_eps by finite differences, and the uniform-bound audits.

Index convention: ``riemann[i, j, k, l]`` is R_{i jbar k lbar} with

    R = -d_k d_lbar g_{i jbar} + sum g^{p qbar} (d_k g_{i qbar}) (d_lbar g_{p jbar}),

where g^{p qbar} is defined by sum_q g_{i qbar} g^{p qbar} = delta_i^p, i.e.
g^{p qbar} = (G^{-1})[q, p] for the matrix G[i, j] = g_{i jbar}.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm, qmc

from . import model_geometry as mg
from ._fd import complex_derivatives
from .errors import DomainError, InconsistentFields, StepUnderflow

__all__ = [
    "CurvatureSample",
    "BoundReport",
    "curvature_tensor",
    "symmetry_defects",
    "bisectional_minimum",
    "weighted_offdiagonal_sup",
    "diagonal_lower_bound",
    "f_epsilon_laplacian",
    "trace_log_inequality_check",
    "sphere_gauss_curvature",
    "PatchGrid",
    "ScalarField",
]


@dataclass
class CurvatureSample:
    point: np.ndarray
    epsilon: float
    riemann: np.ndarray
    ricci: np.ndarray
    g: np.ndarray = None
    step: float = None


@dataclass
class BoundReport:
    rows: list
    sup_by_eps: dict
    cap: float
    passed: bool
    growth_ratio: float
    growth_exponent: float = float("nan")
    note: str = ""


def _local_scale(config, z, epsilon, chart="N"):
    """Length scale on which the metric varies near the nearest locus."""
    if not config.factors:
        return np.ones(np.asarray(z).shape[:-1] if np.ndim(z) > 1 else ())
    ts = [t for t, _, _ in mg.factor_data(config, z, chart)]
    if config.model_kind == "sphere":
        ts = [t / config.weight_constant for t in ts]
    return np.sqrt(epsilon**2 + np.min(np.stack(ts), axis=0))


def adaptive_step(config, z, epsilon, chart="N", floor=1e-4):
    scale = _local_scale(config, z, epsilon, chart)
    h = np.maximum(floor, 1e-2 * scale)
    zmax = np.max(np.abs(np.atleast_2d(z)), axis=-1)
    if np.any(h > 0.25 * scale) or np.any(h < 1e-7 * np.maximum(1.0, zmax)):
        raise StepUnderflow(
            f"finite-difference step {np.max(h):.3g} cannot resolve scale "
            f"{np.min(scale):.3g} (eps={epsilon}); point too close to the divisor"
        )
    return h


def curvature_tensor(config, point, epsilon, chart="N", floor=1e-4, levels=3) -> CurvatureSample:
    if epsilon <= 0:
        raise DomainError("curvature audit needs eps > 0")
    z = mg._as_points(config, np.asarray(point, dtype=complex)).reshape(1, -1)
    h = adaptive_step(config, z, epsilon, chart, floor)
    R, ric, g = _curvature_many(config, z, epsilon, chart, h, levels)
    return CurvatureSample(z[0], float(epsilon), R[0], ric[0], g[0], float(h[0]))


def _curvature_many(config, z, epsilon, chart, h, levels):
    fn = lambda pts: mg.metric_field(config, pts, epsilon, chart)  # noqa: E731
    d = complex_derivatives(fn, z, h, levels=levels)
    g = mg.metric_field(config, z, epsilon, chart)
    G = 0.5 * (g + np.conj(np.swapaxes(g, -1, -2)))
    Ginv = np.linalg.inv(G)
    dk = np.moveaxis(d["d"], 0, 1)  # (M, k, i, j)
    dl = np.moveaxis(d["dbar"], 0, 1)
    ddb = np.moveaxis(d["ddbar"], 2, 0)  # (M, k, l, i, j)
    R = -np.einsum("mklij->mijkl", ddb) + np.einsum("mkiq,mqp,mlpj->mijkl", dk, Ginv, dl)
    ric = np.einsum("mijkl,mlk->mij", R, Ginv)
    return R, ric, G


def symmetry_defects(sample: CurvatureSample):
    """(hermitian, kahler) defects relative to max |R|."""
    R = sample.riemann
    scale = max(np.max(np.abs(R)), 1e-300)
    herm = np.max(np.abs(R - np.conj(np.transpose(R, (1, 0, 3, 2)))))
    kah = np.max(np.abs(R - np.transpose(R, (2, 1, 0, 3))))
    return float(herm / scale), float(kah / scale)


def _unit_directions(n, count, G, seed):
    m = int(np.ceil(np.log2(max(count, 2))))
    sob = qmc.Sobol(d=4 * n, scramble=True, seed=seed)
    u = sob.random_base2(m)[:count]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    gauss = norm.ppf(u)
    v = gauss[:, :n] + 1j * gauss[:, n : 2 * n]
    w = gauss[:, 2 * n : 3 * n] + 1j * gauss[:, 3 * n :]

    def normalize(x):
        nn = np.real(np.einsum("mp,pq,mq->m", x, G, x.conj()))
        return x / np.sqrt(nn)[:, None]

    return normalize(v), normalize(w)


def bisectional_from_tensor(R, G, n_directions=64, seed=0):
    n = G.shape[0]
    v, w = _unit_directions(n, n_directions, G, seed)
    vals = np.real(np.einsum("pqrs,mp,mq,mr,ms->m", R, v, v.conj(), w, w.conj()))
    return float(vals.min())


def bisectional_minimum(config, point, epsilon, n_directions=64, seed=0) -> float:
    if n_directions < 64:
        raise DomainError("at least 64 direction pairs")
    s = curvature_tensor(config, point, epsilon)
    return bisectional_from_tensor(s.riemann, s.g, n_directions, seed)


def _coordinate_taus(config):
    taus = np.ones(config.dimension)
    for f in config.factors:
        taus[int(f.locus)] = f.tau
    return taus


def _stability(sups, cap, floor=1e-9):
    vals = np.array([v for v in sups.values()])
    eps = np.array(list(sups.keys()))
    if vals.size == 0 or np.all(vals <= floor):
        return True, 1.0, 0.0
    pos = vals > floor
    ratio = float(vals[pos].max() / vals[pos].min()) if pos.all() else float("inf")
    expo = float("nan")
    if pos.sum() >= 2:
        expo = float(-np.polyfit(np.log(eps[pos]), np.log(vals[pos]), 1)[0])
    return ratio <= cap, ratio, expo


def weighted_offdiagonal_sup(config, sample_set, epsilon_list, cap=10.0, floor=1e-9) -> BoundReport:
    """sup of prod_{slots}(eps^2+|z^i|^2)^{(1-tau_i)/2} |R_{pqrs}| over index tuples not all equal."""
    if config.model_kind != "local":
        raise DomainError("weighted bounds are a local-model audit")
    n = config.dimension
    taus = _coordinate_taus(config)
    tuples = [t for t in itertools.product(range(n), repeat=4) if len(set(t)) > 1]
    rows, sups = [], {}
    for e in epsilon_list:
        best = 0.0
        for pt in sample_set:
            pt = np.asarray(pt, dtype=complex)
            s = curvature_tensor(config, pt, e)
            wi = (e * e + np.abs(pt) ** 2) ** ((1 - taus) / 2)
            for (p, q, r, t) in tuples:
                val = float(wi[p] * wi[q] * wi[r] * wi[t] * abs(s.riemann[p, q, r, t]))
                rows.append({"epsilon": e, "point": tuple(pt), "index_tuple": (p, q, r, t), "weighted_value": val})
                best = max(best, val)
        sups[e] = best
    ok, ratio, expo = _stability(sups, cap, floor)
    for row in rows:
        row["cap"] = cap
        row["pass"] = ok
    return BoundReport(rows, sups, cap, ok, ratio, expo)


def diagonal_lower_bound(config, ray, epsilon_list, cap=10.0) -> BoundReport:
    """inf along the ray of (eps^2+|z^p|^2)^{2(1-tau_p)} R_{p pbar p pbar}.

    ``ray`` is (direction, radii). Pass iff the negative parts of the
    per-eps infima stay within a factor ``cap`` of each other.
    """
    direction, radii = ray
    d = np.asarray(direction, dtype=complex)
    d = d / np.linalg.norm(d)
    rows, infs = [], {}
    for e in epsilon_list:
        lo = np.inf
        for r in radii:
            z = r * d
            s = curvature_tensor(config, z, e)
            for f in config.factors:
                p = int(f.locus)
                w = (e * e + abs(z[p]) ** 2) ** (2 * (1 - f.tau))
                val = float(w * s.riemann[p, p, p, p].real)
                rows.append({"epsilon": e, "point": tuple(z), "index_tuple": (p, p, p, p), "weighted_value": val})
                lo = min(lo, val)
        infs[e] = lo
    neg = {e: max(0.0, -v) for e, v in infs.items()}
    ok, ratio, expo = _stability(neg, cap, floor=1e-12)
    for row in rows:
        row["cap"] = cap
        row["pass"] = ok
    rep = BoundReport(rows, infs, cap, ok, ratio, expo)
    rep.note = "values are infima; growth measured on their negative parts"
    return rep


# ---------------------------------------------------------------------------
# F_eps and Delta psi
# ---------------------------------------------------------------------------

@dataclass
class LaplacianSample:
    F: float
    lap_F: float
    lap_psi: float
    lap_psi_algebraic: float
    lower: float
    upper: float
    C: float

    @property
    def within(self):
        tol = 1e-6 * max(1.0, abs(self.lower))
        return self.lower - tol <= self.lap_psi <= self.upper + tol


def _f_values(problem, config, pts, chart):
    if problem is None or getattr(problem, "f_at", None) is None:
        return np.zeros(pts.shape[0])
    return np.asarray(problem.f_at(pts, chart), dtype=float)


def f_epsilon_field(config, problem, pts, epsilon, chart="N"):
    """F_eps = f + log(omega^n / (prod (eps^2+|s_j|^2)^{1-tau_j} omega_eps^n))."""
    pts = mg._as_points(config, pts)
    om = mg.background_density(config, pts)
    ge = mg.metric_field(config, pts, epsilon, chart)
    val = np.log(np.real(np.linalg.det(om))) - np.log(np.real(np.linalg.det(ge)))
    for f, (t, _, _) in zip(config.factors, mg.factor_data(config, pts, chart)):
        val -= (1 - f.tau) * np.log(epsilon**2 + t)
    return _f_values(problem, config, pts.reshape(-1, config.dimension), chart).reshape(val.shape) + val


def f_epsilon_laplacian(config, problem, point, epsilon, chart="N", gamma=None, levels=2) -> LaplacianSample:
    if epsilon <= 0:
        raise DomainError("need eps > 0")
    z = mg._as_points(config, np.asarray(point, dtype=complex)).reshape(1, -1)
    n = config.dimension
    h = adaptive_step(config, z, epsilon, chart)
    dF = complex_derivatives(lambda p: f_epsilon_field(config, problem, p, epsilon, chart), z, h, levels=levels)
    dP = complex_derivatives(lambda p: mg.potential_field(config, p, epsilon, chart), z, h, levels=levels)
    G = mg.metric_field(config, z, epsilon, chart)[0]
    Ginv = np.linalg.inv(G)
    # Delta u = sum g^{p qbar} u_{p qbar}, g^{p qbar} = Ginv[q, p]
    lapF = float(np.real(np.einsum("pq,qp->", dF["ddbar"][:, :, 0], Ginv)))
    lapP = float(np.real(np.einsum("pq,qp->", dP["ddbar"][:, :, 0], Ginv)))
    om = mg.background_density(config, z)[0]
    alg = float(n - np.real(np.trace(Ginv @ om)))
    if gamma is None:
        gamma = mg.domination_constant(config)
    C = 1.0 / gamma
    return LaplacianSample(float(dF["F"][0]), lapF, lapP, alg, -n * (C - 1), float(n), C)


# ---------------------------------------------------------------------------
# trace-log inequality on grid fields (complex dimension one)
# ---------------------------------------------------------------------------

class PatchGrid:
    """Uniform square grid on [x0, x0+L)^2, periodic or with a one-node border."""

    def __init__(self, n, length=2 * np.pi, origin=0.0, periodic=True):
        self.n = n
        self.periodic = periodic
        if periodic:
            self.h = length / n
            x = origin + self.h * np.arange(n)
        else:
            self.h = length / (n - 1)
            x = origin + self.h * np.arange(n)
        self.x = x
        X, Y = np.meshgrid(x, x, indexing="xy")
        self.z = X + 1j * Y
        self.mask = np.ones((n, n), dtype=bool)
        if not periodic:
            self.mask[0, :] = self.mask[-1, :] = self.mask[:, 0] = self.mask[:, -1] = False

    def ddbar(self, u):
        """u_{z zbar} = (u_xx + u_yy)/4, five-point stencil."""
        if self.periodic:
            lap = (
                np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4 * u
            ) / self.h**2
        else:
            lap = np.full_like(u, np.nan, dtype=float)
            lap[1:-1, 1:-1] = (
                u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]
            ) / self.h**2
        return lap / 4.0

    def integrate(self, vals):
        return float(np.sum(vals[self.mask]) * self.h**2)


@dataclass
class ScalarField:
    grid: object
    values: np.ndarray


@dataclass
class TraceLogReport:
    margin: np.ndarray
    min_margin: float
    tol_grid: float
    passed: bool
    consistency: float


def trace_log_inequality_check(omega_field, omega_prime_field, f_field, B, tol_factor=1.0, consistency_tol=1e-6):
    """Pointwise Delta' log tr_omega omega' - [Delta f / tr_omega omega' - B tr_omega' omega].

    Fields are metric densities (coefficient of i dz^dzbar) and f on one grid.
    """
    grid = omega_field.grid
    om = np.asarray(omega_field.values, dtype=float)
    omp = np.asarray(omega_prime_field.values, dtype=float)
    f = np.asarray(f_field.values, dtype=float)
    if np.any(om <= 0) or np.any(omp <= 0):
        raise InconsistentFields("metric densities must be positive")
    tr = omp / om
    cons = float(np.max(np.abs(np.log(tr) - f)))
    if cons > consistency_tol * max(1.0, float(np.max(np.abs(f)))):
        raise InconsistentFields(f"omega'^n = e^f omega^n violated by {cons:.3g}")
    lhs = grid.ddbar(np.log(tr)) / omp
    rhs = (grid.ddbar(f) / om) / tr - B * om / omp
    margin = lhs - rhs
    m = margin[grid.mask] if hasattr(grid, "mask") else margin
    tol = tol_factor * grid.h
    mn = float(np.nanmin(m))
    return TraceLogReport(margin, mn, tol, mn >= -tol, cons)


# ---------------------------------------------------------------------------
# vectorized curvature of omega_eps on the sphere (n = 1)
# ---------------------------------------------------------------------------

def sphere_gauss_curvature(config, z, epsilon, chart="N", levels=2, floor=1e-6):
    """Gauss curvature of omega_eps (= its bisectional curvature in n=1) at points z."""
    z = np.asarray(z, dtype=complex).reshape(-1, 1)
    scale = _local_scale(config, z, epsilon, chart) if config.factors else np.ones(z.shape[0])
    h = np.maximum(floor, 1e-2 * scale)
    R, _, G = _curvature_many(config, z, epsilon, chart, h, levels)
    return np.real(R[:, 0, 0, 0, 0]) / np.real(G[:, 0, 0]) ** 2


def ricci_field(config, z, epsilon, chart="N", levels=2, floor=1e-6):
    """Ricci coefficients R_{i jbar} of omega_eps at points z, shape (M, n, n)."""
    z = np.asarray(z, dtype=complex).reshape(-1, config.dimension)
    scale = _local_scale(config, z, epsilon, chart) if config.factors else np.ones(z.shape[0])
    h = np.maximum(floor, 1e-2 * scale)
    _, ric, _ = _curvature_many(config, z, epsilon, chart, h, levels)
    return ric


def audit_sample_set(config, count=20):
    """Fixed off-locus sample set: log-spaced radii in [1e-3, 0.9], golden-angle phases.

    The smallest radius keeps the adaptive step resolvable down to eps = 1e-4.
    """
    n = config.dimension
    radii = np.geomspace(1e-3, 0.9, count)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    pts = np.empty((count, n), dtype=complex)
    for i in range(n):
        # rotate the radius list per coordinate so points are not all on the diagonal
        r = np.roll(radii, 7 * i)
        pts[:, i] = r * np.exp(1j * golden * (np.arange(count) + i))
    return pts
