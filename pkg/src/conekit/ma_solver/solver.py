"""Regularized Monge-Ampere family on P^1 with cone points.

Conventions: omega = s * omega_FS with omega_FS = 2 i dz^dzbar / (1+|z|^2)^2,
Delta_omega u = (i ddbar u) / omega. All densities below are relative to omega
unless named otherwise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import model_geometry as mg
from ..curvature_audit import sphere_gauss_curvature
from ..errors import DegreeMismatch, DomainError, NoConvergence, PositivityLost, TooCoarse
from .grid import CHARTS, SphereGrid

DEFAULT_SCHEDULE = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001)


def degree_k_plus_d(config):
    return -2.0 + float(sum(f.a for f in config.factors))


@dataclass
class Twist:
    """Semi-definite form alpha = density(z, chart) * omega with sign lambda'."""

    density: Callable
    sign: int = 1


@dataclass
class ProblemData:
    config: object
    lam: int
    grid: SphereGrid
    f: np.ndarray
    twist: Optional[Twist] = None
    poisson_residual: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def omega(self):
        """background density in each node's chart coordinate"""
        if "omega" not in self._cache:
            r2 = np.abs(self.grid.z) ** 2
            self._cache["omega"] = self.config.background_scale * 2.0 / (1.0 + r2) ** 2
        return self._cache["omega"]

    def laplacian(self):
        """Delta_omega as a sparse matrix on the unknowns."""
        if "lap" not in self._cache:
            self._cache["lap"] = (sp.diags(1.0 / (4.0 * self.omega)) @ self.grid.flat_laplacian).tocsr()
        return self._cache["lap"]

    def _per_chart(self, fn):
        out = None
        for k, c in enumerate(CHARTS):
            sel = self.grid.chart == k
            vals = fn(self.grid.z[sel], c)
            if out is None:
                out = np.empty((self.grid.size,) + np.shape(vals)[1:], dtype=np.asarray(vals).dtype)
            out[sel] = vals
        return out

    def fields(self, epsilon):
        """(g_eps / omega, psi_eps, density P_eps = prod (eps^2+t_j)^(tau_j-1)) at nodes."""
        key = ("fields", float(epsilon))
        if key not in self._cache:
            cfg = self.config

            def one(z, c):
                g, psi = mg._assemble(cfg, z, epsilon, c)
                P = np.ones(z.shape)
                for f, (t, _, _) in zip(cfg.factors, mg.factor_data(cfg, z, c)):
                    P = P * (epsilon**2 + t) ** (f.tau - 1.0)
                return np.stack([np.real(g[..., 0, 0]), psi, P], axis=-1)

            arr = self._per_chart(one)
            self._cache[key] = (arr[:, 0] / self.omega, arr[:, 1], arr[:, 2])
        return self._cache[key]

    def null_weights(self):
        """left null vector of Delta_omega, normalized to total mass = area."""
        if "ell" not in self._cache:
            B = _bordered(self.laplacian(), self.grid.pou * self.omega * self.grid.cell)
            lu = spla.splu(B)
            rhs = np.zeros(self.grid.size + 1)
            rhs[-1] = 1.0
            ell = lu.solve(rhs, trans="T")[:-1]
            area = 4 * math.pi * self.config.background_scale
            self._cache["ell"] = ell * area / ell.sum()
            self._cache["lu_bordered"] = lu
        return self._cache["ell"]

    def f_at(self, pts, chart="N"):
        """f at arbitrary points (cubic interpolation of the grid field)."""
        pts = np.asarray(pts, dtype=complex).reshape(-1)
        return self.grid.interpolate(self.f, pts, chart)

    def f_for(self, epsilon):
        """f with the per-eps additive constant (lambda = 0)."""
        if self.lam != 0:
            return self.f
        G, _, P = self.fields(epsilon)
        ell = self.null_weights()
        c = math.log(float(ell @ G) / float(ell @ (np.exp(self.f) * P)))
        return self.f + c


def _bordered(A, w):
    M = A.shape[0]
    col = sp.csc_matrix(np.ones((M, 1)))
    row = sp.csr_matrix(w.reshape(1, M))
    return sp.bmat([[A, col], [row, None]], format="csc")


def assemble_problem(config, lam, twist: Optional[Twist] = None, resolution=256, f=None) -> ProblemData:
    """Poisson solve for f, after checking the degree condition.

    ``f="zero"`` skips the Poisson step and the degree check (synthetic data).
    """
    if config.model_kind != "sphere":
        raise DomainError("the global solver works on the sphere model")
    if lam not in (0, 1):
        raise DomainError("lambda must be 0 or 1")
    deg = degree_k_plus_d(config)
    if f is None or f == "poisson":
        if lam == 1:
            if not deg > 0:
                raise DegreeMismatch(f"lambda=1 needs deg(K+D) > 0, got {deg:g}")
            if twist is not None:
                raise DomainError("twist is only used with lambda = 0")
        elif twist is None:
            if abs(deg) > 1e-12:
                raise DegreeMismatch(f"lambda=0 needs deg(K+D) = 0, got {deg:g}")
        else:
            if abs(deg) < 1e-12 or int(np.sign(deg)) != int(twist.sign):
                raise DegreeMismatch(f"twist sign {twist.sign} does not match deg(K+D) = {deg:g}")
    if lam == 1 and deg > 0:
        s = deg / 2.0
        if abs(config.background_scale - s) > 1e-14:
            config = config.replace(background_scale=s)
            config = config.replace(normalizer=mg.select_normalizer(config))
    grid = SphereGrid(resolution)
    prob = ProblemData(config, lam, grid, np.zeros(grid.size), twist)
    if f == "zero":
        return prob
    if f is not None and f != "poisson":
        prob.f = np.asarray(f, dtype=float)
        return prob
    s = config.background_scale
    # Ric(omega) = omega_FS and Theta_j = omega_FS / 2 for the round weights
    rhs = np.full(grid.size, lam + (1.0 - 0.5 * sum(fc.a for fc in config.factors)) / s)
    if twist is not None:
        alpha = prob._per_chart(lambda z, c: np.asarray(twist.density(z, c), dtype=float))
        if np.any(alpha < 0):
            raise DomainError("twist density must be semi-definite")
        mass = grid.integrate(alpha, prob.omega)
        alpha = alpha * (2 * math.pi * abs(deg)) / mass
        prob._cache["alpha"] = alpha
        rhs = rhs + twist.sign * alpha
    fvals, c, res = _poisson(prob, rhs)
    prob.f = fvals
    prob.poisson_residual = res
    return prob


def _poisson(prob, rhs):
    """Delta_omega u = rhs - c, sum(weights u) = 0; returns (u, c, residual)."""
    A = prob.laplacian()
    w = prob.grid.pou * prob.omega * prob.grid.cell
    prob.null_weights()
    lu = prob._cache["lu_bordered"]
    sol = lu.solve(np.concatenate([rhs, [0.0]]))
    u, c = sol[:-1], sol[-1]
    res = float(np.max(np.abs(A @ u + c - rhs))) if u.size else 0.0
    return u, float(c), res


@dataclass
class SolverParams:
    tol: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0
    min_step: float = 1.0 / 1024


@dataclass
class PotentialField:
    grid: SphereGrid
    phi: np.ndarray
    epsilon: float
    residual_sup: float
    normalization: float
    newton_iters: int = 0
    tol: float = 1e-8
    f: np.ndarray = None

    def density_ratio(self, problem):
        """omega'/omega at nodes from the discrete operator."""
        G, _, _ = problem.fields(self.epsilon)
        return G + problem.laplacian() @ self.phi


def _residual(problem, phi, eps, fe):
    G, psi, P = problem.fields(eps)
    lapphi = problem.laplacian() @ phi
    if problem.lam == 0:
        rhs = np.exp(fe) * P
    else:
        rhs = np.exp(fe + psi + phi) * P
    return lapphi + G - rhs, rhs, G + lapphi


def solve_star_epsilon(problem: ProblemData, epsilon, params: SolverParams = None, initial=None) -> PotentialField:
    if not epsilon > 0:
        raise DomainError("eps must be positive")
    params = params or SolverParams()
    grid = problem.grid
    w = grid.pou * problem.omega * grid.cell
    fe = problem.f_for(epsilon)
    G, psi, P = problem.fields(epsilon)
    if problem.lam == 0:
        phi, c, _ = _poisson(problem, np.exp(fe) * P - G)
        R, _, dens = _residual(problem, phi, epsilon, fe)
        res = float(np.max(np.abs(R)))
        if np.any(dens <= 0):
            raise PositivityLost("omega' not positive at some node", epsilon=epsilon)
        if not res <= params.tol:
            raise NoConvergence(f"linear solve residual {res:.3g} > tol (compatibility {c:.3g})", epsilon=epsilon)
        mean = float(w @ phi) / float(w.sum())
        return PotentialField(grid, phi, float(epsilon), res, mean, 1, params.tol, fe)
    # lambda = 1: damped Newton
    A = problem.laplacian()
    phi = np.zeros(grid.size) if initial is None else np.array(initial, dtype=float)
    R, rhs, dens = _residual(problem, phi, epsilon, fe)
    res = float(np.max(np.abs(R)))
    it = 0
    while res > params.tol:
        if it >= params.max_iter:
            raise NoConvergence(f"Newton stalled at residual {res:.3g}", epsilon=epsilon)
        J = (A - sp.diags(rhs)).tocsc()
        delta = spla.spsolve(J, -R)
        step = params.damping
        while True:
            trial = phi + step * delta
            Rt, rhst, denst = _residual(problem, trial, epsilon, fe)
            rt = float(np.max(np.abs(Rt)))
            if np.all(denst > 0) and (rt < res or rt <= params.tol):
                break
            step /= 2
            if step < params.min_step:
                if not np.all(denst > 0):
                    raise PositivityLost("line search cannot keep omega' > 0", epsilon=epsilon)
                raise NoConvergence(f"line search failed at residual {res:.3g}", epsilon=epsilon)
        phi, R, rhs, res = trial, Rt, rhst, rt
        it += 1
    mean = float(w @ phi) / float(w.sum())
    return PotentialField(grid, phi, float(epsilon), res, mean, it, params.tol, fe)


def max_principle_bound(problem, field_):
    """sup(|F_eps| + |psi_eps|) at the nodes, F_eps = f + log(P omega / omega_eps)."""
    G, psi, P = problem.fields(field_.epsilon)
    F = field_.f + np.log(P / G)
    return float(np.max(np.abs(F) + np.abs(psi)))


# ---------------------------------------------------------------------------
# continuation and monitors
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "epsilon", "sup_phi", "inf_phi", "osc_rho", "A_min", "A_max",
    "newton_iters", "residual_sup", "min_bisec", "wall_ms",
)


@dataclass
class EstimateTrace:
    rows: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)


def min_bisectional(problem, epsilon):
    cfg = problem.config
    if not cfg.factors:
        return 1.0 / cfg.background_scale
    vals = problem._per_chart(lambda z, c: sphere_gauss_curvature(cfg, z, epsilon, c))
    return float(np.min(vals))


def continuation_run(problem, epsilon_schedule=DEFAULT_SCHEDULE, params=None, record_timing=True):
    eps = [float(e) for e in epsilon_schedule]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DomainError("schedule must be strictly decreasing")
    trace = EstimateTrace()
    phi0 = None
    last = None
    for e in eps:
        t0 = time.perf_counter()
        last = solve_star_epsilon(problem, e, params, initial=phi0)
        phi0 = last.phi
        G, psi, _ = problem.fields(e)
        ratio = last.density_ratio(problem) / G
        rho = psi + last.phi
        row = {
            "epsilon": e,
            "sup_phi": float(last.phi.max()),
            "inf_phi": float(last.phi.min()),
            "osc_rho": float(rho.max() - rho.min()),
            "A_min": float(ratio.min()),
            "A_max": float(ratio.max()),
            "newton_iters": int(last.newton_iters),
            "residual_sup": float(last.residual_sup),
            "min_bisec": min_bisectional(problem, e),
        }
        row["wall_ms"] = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0
        trace.rows.append(row)
    return trace, last


def solved_density(field_, problem, z, chart="N"):
    """omega' density (coefficient of i dz^dzbar) off the grid, read through the equation."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    cfg = problem.config
    eps = field_.epsilon
    g = mg.background_density(cfg, z)[..., 0, 0].real
    P = np.ones(z.shape)
    for fc, (t, _, _) in zip(cfg.factors, mg.factor_data(cfg, z, chart)):
        P = P * (eps**2 + t) ** (fc.tau - 1.0)
    expo = field_.grid.interpolate(field_.f, z, chart)
    if problem.lam == 1:
        expo = expo + mg.potential_field(cfg, z, eps, chart) + field_.grid.interpolate(field_.phi, z, chart)
    return np.exp(expo) * P * g


@dataclass
class AngleReport:
    points: list
    radii: np.ndarray
    angle_ratio: np.ndarray  # (points, radii): (dC/dr_geo) / (2 pi)
    angle_estimate: np.ndarray
    taus: np.ndarray
    quasi_isometry: np.ndarray  # (points, radii, angles) omega'/omega_o
    spread: float
    passed_angle: bool
    passed_spread: bool


def _local_chart(p):
    hp = mg._homog(p)
    if abs(hp[0]) >= abs(hp[1]):
        return "N", hp[1] / hp[0]
    return "S", hp[0] / hp[1]


def cone_asymptotics_check(field_, problem, radii=None, n_angles=64, angle_tol=0.03, spread_cap=4.0):
    grid = field_.grid
    h = grid.h
    if radii is None:
        radii = np.geomspace(5 * h, 50 * h, 8)
    radii = np.asarray(radii, dtype=float)
    cfg = problem.config
    if not cfg.factors:
        return AngleReport([], radii, np.ones((1, len(radii))), np.ones(1), np.ones(1),
                           np.ones((1, len(radii), 1)), 1.0, True, True)
    if radii.min() < 2 * h:
        raise TooCoarse(f"innermost annulus {radii.min():.3g} below two grid steps")
    alpha = 2 * np.pi * np.arange(n_angles) / n_angles
    dr = 0.01
    ratios, qi, est = [], [], []
    for fc in cfg.factors:
        chart, p = _local_chart(fc.locus)
        if radii.max() > 0.5 * _nearest_other(cfg, fc, chart, p):
            raise TooCoarse("probe annuli reach another cone point; refine the grid")
        c_rows, q_rows = [], []
        for r in radii:
            circ = p + r * np.exp(1j * alpha)
            gp = solved_density(field_, problem, circ, chart)
            # d C / d(geodesic radius) along radial lines; equals 2 pi tau on an
            # exact cone and is insensitive to the smoothed core at the tip
            Cs = []
            for rr in (r * (1 - dr), r * (1 + dr)):
                ring = solved_density(field_, problem, p + rr * np.exp(1j * alpha), chart)
                Cs.append(np.mean(np.sqrt(2 * ring)) * 2 * np.pi * rr)
            dC = (Cs[1] - Cs[0]) / (2 * r * dr)
            dd = np.mean(np.sqrt(2 * gp))
            c_rows.append(dC / (2 * np.pi * dd))
            g0 = mg.metric_field(cfg, circ, 0.0, chart)[..., 0, 0].real
            q_rows.append(gp / g0)
        ratios.append(c_rows)
        qi.append(q_rows)
        est.append(c_rows[0])
    ratios = np.array(ratios)
    qi = np.array(qi)
    taus = cfg.taus
    est = np.array(est)
    spread = float(qi.max() / qi.min())
    ok_angle = bool(np.all(np.abs(est / taus - 1) <= angle_tol))
    return AngleReport([f.locus for f in cfg.factors], radii, ratios, est, taus, qi, spread,
                       ok_angle, spread <= spread_cap)


def _nearest_other(cfg, fc, chart, p):
    best = np.inf
    for other in cfg.factors:
        if other is fc:
            continue
        c2, q = _local_chart(other.locus)
        if c2 != chart:
            q = 1.0 / q if q != 0 else np.inf
        best = min(best, abs(q - p))
    return best


def _angular_distance(grid, p):
    hp = mg._homog(p)
    zp = hp[1] / hp[0] if abs(hp[0]) > 0 else np.inf
    if np.isfinite(zp):
        r2 = abs(zp) ** 2
        q = np.array([2 * zp.real / (1 + r2), 2 * zp.imag / (1 + r2), (1 - r2) / (1 + r2)])
    else:
        q = np.array([0.0, 0.0, -1.0])
    return np.arccos(np.clip(grid.unit_vectors() @ q, -1, 1))


def gauss_curvature_nodes(field_, problem):
    """K' = (K_omega - Delta_omega log(omega'/omega)) / (omega'/omega) at nodes."""
    R = field_.density_ratio(problem)
    if np.any(R <= 0):
        raise PositivityLost("omega' not positive", epsilon=field_.epsilon)
    Ko = 1.0 / problem.config.background_scale
    return (Ko - problem.laplacian() @ np.log(R)) / R, R


def ricci_residual(field_, problem, min_distance=0.3):
    K, R = gauss_curvature_nodes(field_, problem)
    mask = np.ones(field_.grid.size, dtype=bool)
    for fc in problem.config.factors:
        mask &= _angular_distance(field_.grid, fc.locus) >= min_distance
    if problem.lam == 1:
        target = -1.0
    elif problem.twist is not None:
        target = -problem.twist.sign * problem._cache["alpha"] / R
    else:
        target = 0.0
    target = np.broadcast_to(target, K.shape)
    return float(np.max(np.abs(K - target)[mask]))


def dump_field(field_, path_prefix):
    """Write one text grid per chart; returns the paths."""
    paths = []
    for c in CHARTS:
        arr = field_.grid.chart_array(field_.phi, c)
        path = f"{path_prefix}_{c}.txt"
        with open(path, "w") as fh:
            fh.write(f"resolution = {field_.grid.n}\n")
            fh.write(f"chart = {c}\n")
            for row in arr:
                fh.write(" ".join(format(float(x), ".17g") for x in row) + "\n")
        paths.append(path)
    return paths
