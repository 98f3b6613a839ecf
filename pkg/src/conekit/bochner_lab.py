"""Log-log cut-offs, their gradient energy near cone points, the naive
cut-off contrast, and a discrete check of the Bochner identity in n = 1.

Conventions (n = 1): a metric is its density g (omega = g i dz^dzbar, so the
area element is 2 g dx dy). A type (r, s) tensor u = u1 (d/dz)^r (dz)^s has
|u|^2_g = |u1|^2 g^(r-s). Tensor and metric callables take (z, chart) with
chart "N" (coordinate z) or "S" (coordinate w = 1/z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import roots_legendre

from . import model_geometry as mg
from .errors import AnnulusUnresolved, DomainError, NotCompactlySupported
from .orbifold_tensors import OrbifoldPairP1, TensorSpec, _ceil, h0_dimension_p1

# smallest radius we trust around a cone point sitting at a nonzero chart coordinate,
# relative to |p|; at p = 0 the floor is absolute (keeps r^2 out of the subnormals)
REL_FLOOR = 64 * np.finfo(float).eps
ABS_FLOOR = 1e-150


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------

def smoothstep(x):
    """Xi_1: 0 on (-inf, 1], 3u^2 - 2u^3 with u = x - 1 on [1, 2], 1 on [2, inf)."""
    u = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def smoothstep_prime(x):
    u = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return 6.0 * u * (1.0 - u)


def xi_eps(x, epsilon):
    return smoothstep(np.asarray(x, dtype=float) - 1.0 / epsilon + 1.0)


def xi_eps_prime(x, epsilon):
    return smoothstep_prime(np.asarray(x, dtype=float) - 1.0 / epsilon + 1.0)


@dataclass
class CutoffSpec:
    epsilon: float
    xi_profile: Callable = smoothstep

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")

    @property
    def support(self):
        """rho-interval carrying the gradient."""
        return 1.0 / self.epsilon, 1.0 / self.epsilon + 1.0


# ---------------------------------------------------------------------------
# rho = log(-sum log |s_j|^2) and its (1,0) derivative
# ---------------------------------------------------------------------------

def _dlog_t(config, z, chart="N"):
    """d/dz log t_j for each factor, closed form; list of arrays (..., n)."""
    z = mg._as_points(config, z)
    out = []
    if config.model_kind == "local":
        for f in config.factors:
            k = int(f.locus)
            w = f.hermitian_weight or mg.zero_weight(config.dimension)
            d = -w.grad(z).astype(complex)
            d[..., k] += 1.0 / z[..., k]
            out.append(d)
        return out
    x = z[..., 0]
    for f in config.factors:
        p0, p1 = mg._homog(f.locus)
        if chart == "N":
            d = -p0 / (p1 - x * p0)
        else:
            d = p1 / (x * p1 - p0)
        d = d - np.conj(x) / (1.0 + np.abs(x) ** 2)
        out.append(d[..., None])
    return out


def _log_product(config, z, chart="N"):
    """sum_j log t_j, shape (...,)."""
    data = mg.factor_data(config, z, chart)
    with np.errstate(divide="ignore"):
        return sum(np.log(t) for t, _, _ in data) if data else np.zeros(np.shape(z)[:-1])


def rho_field(config, z, chart="N"):
    """rho and d rho / dz (..., n). Needs prod t_j < 1, which the sphere weights guarantee."""
    lp = _log_product(config, z, chart)
    L = -lp
    if np.any(L <= 0):
        raise DomainError("log-log cut-off needs prod |s_j|^2 < 1")
    dL = -sum(_dlog_t(config, z, chart))
    return np.log(L), dL / L[..., None]


def _inv_metric(metric, z, chart, n):
    g = np.asarray(metric(z, chart))
    if g.ndim >= 2 and g.shape[-2:] == (n, n):
        return np.linalg.inv(g)
    return (1.0 / g)[..., None, None]


def _default_metric(config):
    def metric(z, chart="N"):
        return mg.metric_field(config, z, 0.0, chart)

    return metric


def cutoff_theta(config, point, epsilon, metric: Optional[Callable] = None, chart="N"):
    """theta_eps = 1 - Xi_eps(rho) and |dbar theta_eps|^2 measured in ``metric``
    (defaults to the cone metric omega_o)."""
    n = config.dimension
    rho, drho = rho_field(config, point, chart)
    theta = 1.0 - xi_eps(rho, epsilon)
    dxi = xi_eps_prime(rho, epsilon)
    if np.ndim(rho) == 0 and dxi == 0.0:
        return float(theta), 0.0
    metric = metric or _default_metric(config)
    Ginv = _inv_metric(metric, mg._as_points(config, point), chart, n)
    # |dbar f|^2 = sum g^{i jbar} d_i f conj(d_j f) for real f
    q = np.real(np.einsum("...i,...ji,...j->...", drho, Ginv, np.conj(drho)))
    val = dxi**2 * q
    if np.ndim(val) == 0:
        return float(theta), float(val)
    return theta, val


# ---------------------------------------------------------------------------
# gradient energy of cut-offs around each cone point
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    epsilons: np.ndarray
    integrals: np.ndarray
    fit_slope: float
    passed: bool
    kind: str = "log"
    monotone: bool = True
    ratio: float = float("nan")  # max / min (naive cut-off)
    per_point: dict = field(default_factory=dict)

    @property
    def ln_integrals(self):
        with np.errstate(divide="ignore"):
            return np.log(self.integrals)

    def rows(self):
        ln = self.ln_integrals
        return [
            (float(e), float(v), float(l), float(self.fit_slope), bool(self.passed))
            for e, v, l in zip(self.epsilons, self.integrals, ln)
        ]


DECAY_COLUMNS = ("epsilon", "integral", "ln_integral", "fit_slope", "pass")


def local_chart(p):
    hp = mg._homog(p)
    if abs(hp[0]) >= abs(hp[1]):
        return "N", complex(hp[1] / hp[0])
    return "S", complex(hp[0] / hp[1])


def _radius_cap(config, idx):
    """Half the distance, in the chart of point idx, to the nearest other cone point."""
    chart, p = local_chart(config.factors[idx].locus)
    best = np.inf
    for j, f in enumerate(config.factors):
        if j == idx:
            continue
        hp = mg._homog(f.locus)
        lead, other = (hp[0], hp[1]) if chart == "N" else (hp[1], hp[0])
        if abs(lead) < 1e-300:
            continue
        best = min(best, abs(other / lead - p))
    return 0.5 * best if np.isfinite(best) else 1e3


def _call(fn, z, chart):
    return np.asarray(fn(z, chart))


def _tensor_density(tensor: TensorSpec, metric, z, chart):
    """|u1|^2 g^m (the pointwise |u|^2_g), with g the scalar density."""
    comps = _call(tensor.components, z, chart)
    g = _call(metric, z, chart)
    if g.ndim and g.shape[-2:] == (1, 1):
        g = g[..., 0, 0]
    g = np.real(g)
    return np.abs(comps) ** 2 * g ** (tensor.r - tensor.s)


def _polar_energy(config, tensor, metric, idx, level_fn, lo, hi, var, n_angles, n_gauss):
    """Integral of Xi'(level)^2 |d level|^2 |u|^2_g 2 dx dy over {lo <= level <= hi}
    around factor idx, in polar coordinates with radial variable ``var``:
    'loglog' (sigma = log(-log r)) or 'log' (sigma = log r)."""
    chart, p = local_chart(config.factors[idx].locus)
    cap = _radius_cap(config, idx)
    floor = max(ABS_FLOOR, REL_FLOOR * abs(p))
    if var == "loglog":
        to_r = lambda s: math.exp(-math.exp(s)) if s < 700 else 0.0
        # dx dy = r dr dphi = r^2 e^s ds dphi (sign absorbed by orientation)
        jac = lambda s, r: r * r * np.exp(s)
        s_cap = math.log(-math.log(cap)) if cap < 1 else -5.0
    else:
        to_r = math.exp
        jac = lambda s, r: r * r
        s_cap = math.log(cap)
    xg, wg = roots_legendre(n_gauss)
    angles = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    total = 0.0
    for phi in angles:
        e = complex(math.cos(phi), math.sin(phi))

        def level(s):
            r = to_r(s)
            if r == 0.0:
                return np.inf
            with np.errstate(all="ignore"):
                return float(np.ravel(level_fn(np.array([p + r * e]), chart)[0])[0])

        ends = []
        for target in (lo, hi):
            try:
                ends.append(_find_level(level, target, var, s_cap))
            except _OutOfRange as exc:
                raise exc.to_error(config, idx)
        s_a, s_b = sorted(ends)
        r_small = to_r(s_b if var == "loglog" else s_a)
        if r_small < floor:
            raise AnnulusUnresolved(
                f"support annulus around factor {idx} needs radius {r_small:.3g} < {floor:.3g}"
            )
        s = 0.5 * (s_b - s_a) * xg + 0.5 * (s_a + s_b)
        r = np.array([to_r(v) for v in s])
        z = p + r * e
        val, grad = level_fn(z, chart)
        g = np.real(_call(metric, z, chart))
        if g.ndim > 1:
            g = g[..., 0, 0]
        dens = _tensor_density(tensor, metric, z, chart)
        # |dbar theta|^2_g dV / (2 dx dy) = Xi'^2 |d level|^2 (the g cancels in n = 1)
        integrand = grad * dens * 2.0 * jac(s, r)
        total += float(np.sum(wg * integrand)) * 0.5 * (s_b - s_a)
    return total * 2 * np.pi / n_angles


class _OutOfRange(Exception):
    def __init__(self, kind):
        self.kind = kind

    def to_error(self, config, idx):
        if self.kind == "small":
            return AnnulusUnresolved(f"support annulus around factor {idx} is below float range")
        return DomainError(f"cut-off support around factor {idx} reaches another cone point")


def _find_level(level, target, var, s_cap):
    """Radial parameter where level(s) == target; level grows as r shrinks."""
    if var == "loglog":
        # level ~ s + log 2 near the point; grow the bracket outward from the guess
        a, b = max(target - 2.0, s_cap), target + 1.0
        while level(a) > target:
            if a <= s_cap:
                raise _OutOfRange("cap")
            a = max(a - 1.0, s_cap)
        while level(b) < target:
            b += 1.0
            if b > 700:
                raise _OutOfRange("small")
    else:
        b = s_cap
        if level(b) > target:
            raise _OutOfRange("cap")
        a = b - 1.0
        while level(a) < target:
            a -= 1.0
            if a < -700:
                raise _OutOfRange("small")
    return optimize.brentq(lambda s: level(s) - target, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def _fit(eps, E):
    x = 1.0 / np.asarray(eps, dtype=float)
    if x.size < 2:
        return float("nan")
    with np.errstate(divide="ignore"):
        y = np.log(E)
    if not np.all(np.isfinite(y)):
        return -np.inf
    return float(np.polyfit(x, y, 1)[0])


def _is_zero(tensor):
    return getattr(tensor, "components", None) is None


def largest_usable_inverse_epsilon(config, idx=0):
    """Largest integer 1/eps whose log-log annulus around factor idx stays above the radius floor."""
    chart, p = local_chart(config.factors[idx].locus)
    floor = max(ABS_FLOOR, REL_FLOOR * abs(p))
    k = 1
    while True:
        L = math.exp(1.0 / (1.0 / (k + 1)) + 1.0)  # -log prod t at the inner end
        # t ~ c |z - p|^2 up to O(1) factors, so -log r ~ L / 2
        if L / 2 > -math.log(floor) - 5:
            return k
        k += 1


def truncation_error_integral(tensor: TensorSpec, metric_field, config, epsilon_list,
                              n_angles=32, n_gauss=48, slope_cap=-0.45) -> DecayReport:
    """E(eps) = integral of |dbar theta_eps|^2 |u|^2 dV, summed over the cone points."""
    eps = np.asarray(list(epsilon_list), dtype=float)
    if tensor is None or _is_zero(tensor):
        E = np.zeros(len(eps))
        return DecayReport(eps, E, -np.inf, True, "log", True)
    metric_field = metric_field or _default_metric(config)
    E = np.zeros(len(eps))
    per = {}
    for k, e in enumerate(eps):
        lo, hi = 1.0 / e, 1.0 / e + 1.0

        def weighted(z, chart, e=e):
            rho, drho = rho_field(config, z, chart)
            w = xi_eps_prime(rho, e) ** 2 * np.abs(drho[..., 0]) ** 2
            return rho, w

        for idx in range(len(config.factors)):
            try:
                val = _polar_energy(config, tensor, metric_field, idx, weighted, lo, hi, "loglog", n_angles, n_gauss)
            except AnnulusUnresolved as exc:
                raise AnnulusUnresolved(str(exc), 1.0 / largest_usable_inverse_epsilon(config, idx)) from None
            per.setdefault(idx, []).append(val)
            E[k] += val
    slope = _fit(eps, E)
    order = np.argsort(eps)[::-1]
    mono = bool(np.all(np.diff(E[order]) < 0))
    return DecayReport(eps, E, slope, bool(slope <= slope_cap), "log", mono, per_point=per)


def naive_cutoff_integral(tensor: TensorSpec, metric_field, config, epsilon_list,
                          n_angles=32, n_gauss=48, ratio_cap=10.0) -> DecayReport:
    """Same energy for theta = Xi_1(prod |s_j|^2 / eps^2)."""
    eps = np.asarray(list(epsilon_list), dtype=float)
    if tensor is None or _is_zero(tensor):
        return DecayReport(eps, np.zeros(len(eps)), np.nan, True, "naive", True, 1.0)
    metric_field = metric_field or _default_metric(config)
    E = np.zeros(len(eps))
    per = {}
    for k, e in enumerate(eps):

        def weighted(z, chart, e=e):
            lp = _log_product(config, z, chart)
            x = np.exp(lp) / e**2
            dl = sum(_dlog_t(config, z, chart))[..., 0]
            # level = -log x grows toward the point; |d theta| = Xi'(x) x |d log prod|
            w = smoothstep_prime(x) ** 2 * x**2 * np.abs(dl) ** 2
            return -np.log(x), w

        for idx in range(len(config.factors)):
            val = _polar_energy(config, tensor, metric_field, idx, weighted, -math.log(2.0), 0.0, "log", n_angles, n_gauss)
            per.setdefault(idx, []).append(val)
            E[k] += val
    ratio = float(E.max() / E.min()) if E.min() > 0 else np.inf
    passed = bool(ratio <= ratio_cap and E.min() >= 0.1 * E.max())
    return DecayReport(eps, E, _fit(eps, E), passed, "naive", True, ratio, per)


def monomial_tensor(k, r, s=0):
    """u = z^k (d/dz)^r (dz)^s as a two-chart callable (holomorphic on C)."""
    m = r - s

    def comp(z, chart="N"):
        z = np.asarray(z, dtype=complex)
        if chart == "N":
            return z**k
        with np.errstate(divide="ignore", invalid="ignore"):
            return z ** (2 * m - k) * (-1.0) ** m

    return TensorSpec(r, s, comp)


def cone_metric(config, epsilon=0.0):
    def g(z, chart="N"):
        return mg.metric_field(config, z, epsilon, chart)[..., 0, 0].real

    return g


# ---------------------------------------------------------------------------
# Bochner identity on a patch (n = 1)
# ---------------------------------------------------------------------------

def _dbar(grid, f):
    """d f / d zbar = (f_x + i f_y)/2 by central differences."""
    h = grid.h
    if grid.periodic:
        fx = (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / (2 * h)
        fy = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * h)
    else:
        fx = np.zeros_like(f)
        fy = np.zeros_like(f)
        fx[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * h)
        fy[1:-1, :] = (f[2:, :] - f[:-2, :]) / (2 * h)
    return 0.5 * (fx + 1j * fy)


def bochner_identity_check(tensor: TensorSpec, metric_field, curvature_field, grid=None):
    """Both sides of  int |dbar(#u)|^2 = int |dbar u|^2 + int <R(u), u>  on a patch grid.

    ``tensor.components`` is the coefficient array on the grid, ``metric_field``
    the density g, ``curvature_field`` the Ricci coefficient R_{1 1bar}. In
    n = 1 with m = r - s:  #u has coefficient conj(u) g^m, and the zero-order
    term is m R_{1 1bar} |u1|^2 g^(m-1) against dV = 2 g dx dy.
    """
    if grid is None:
        raise DomainError("bochner_identity_check needs the patch grid")
    u = np.asarray(tensor.values(), dtype=complex)
    g = np.asarray(metric_field, dtype=float)
    R = np.asarray(curvature_field, dtype=float)
    if not np.any(u):
        return 0.0, 0.0, 0.0
    if not grid.periodic:
        band = np.ones(u.shape, dtype=bool)
        band[3:-3, 3:-3] = False
        if np.any(u[band] != 0):
            raise NotCompactlySupported("tensor is nonzero within 3 nodes of the patch boundary")
    m = tensor.r - tensor.s
    cell = 2.0 * grid.h**2
    sharp = np.conj(u) * g**m
    lhs = float(np.sum(np.abs(_dbar(grid, sharp)) ** 2 * g ** (-m)) * cell)
    grad = float(np.sum(np.abs(_dbar(grid, u)) ** 2 * g**m) * cell)
    zero = float(np.sum(m * R * np.abs(u) ** 2 * g**m) * cell)
    rhs = grad + zero
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, gap


# ---------------------------------------------------------------------------
# vanishing experiment
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    status: str  # "neutral", "vacuous", "vanishing"
    h0: int
    r: int
    s: int
    epsilons: np.ndarray = None
    truncation: np.ndarray = None  # E(eps)
    zero_order: float = float("nan")  # (r - s) int theta^2 |u|^2
    dbar_energy: float = float("nan")  # int theta^2 |dbar u|^2
    margin: np.ndarray = None  # zero_order - E(eps)
    vanishing_bound: np.ndarray = None  # E(eps) / (r - s)
    passed: bool = True
    note: str = ""


def trial_tensor(pair: OrbifoldPairP1, r, s):
    """Bounded, non-holomorphic trial: u1 = prod (z - p)^e_p / (1 + |z|^2)^q in chart N,
    q the least integer keeping the w-chart coefficient smooth and bounded at infinity.
    Returns (TensorSpec, dbar) with dbar(z, chart) = d u1 / d zbar in that chart.
    """
    m = r - s
    finite, e_inf = [], 0
    for p, a in zip(pair.points, pair.weights):
        e = _ceil(m * a)
        if p == "inf":
            e_inf = e
        else:
            finite.append((complex(p), e))
    deg = sum(e for _, e in finite)
    k = 2 * m - deg
    q = max(0, math.ceil((e_inf - k) / 2), -k)

    def poly(z):
        out = np.ones_like(z)
        for p, e in finite:
            out = out * (z - p) ** e
        return out

    def comp(z, chart="N"):
        z = np.asarray(z, dtype=complex)
        if chart == "N":
            return poly(z) / (1 + np.abs(z) ** 2) ** q
        with np.errstate(divide="ignore", invalid="ignore"):
            zz = 1.0 / z
            return poly(zz) / (1 + np.abs(zz) ** 2) ** q * (-(z**2)) ** m

    def dbar(z, chart="N"):
        z = np.asarray(z, dtype=complex)
        if chart == "N":
            return -q * z * poly(z) / (1 + np.abs(z) ** 2) ** (q + 1)
        zz = 1.0 / z
        d = -q * zz * poly(zz) / (1 + np.abs(zz) ** 2) ** (q + 1)
        return d * (-(z**2)) ** m * (-1.0 / np.conj(z) ** 2)

    return TensorSpec(r, s, comp), dbar


def _sphere_config_for(pair, normalizer="auto"):
    taus = [1.0 - float(a) for a in pair.weights]
    return mg.sphere_config(list(pair.points), taus, normalizer=normalizer, allow_unsafe_tau=True)


def theorem_b_experiment(pair: OrbifoldPairP1, r, s, lambda_case, field_=None, problem=None,
                         epsilon_list=(0.5, 0.4, 1 / 3), resolution=128):
    """Bochner balance for KE metrics: int|dbar #(theta u)|^2 = int|dbar(theta u)|^2 + (s - r) int theta^2|u|^2.

    For r > s this forces int theta^2 |u|^2 <= E(eps)/(r - s) on holomorphic u;
    with no holomorphic candidate (h0 = 0) the report shows the margin
    (r - s) int theta^2 |u|^2 - E(eps) that a bounded non-holomorphic trial must
    pay for in dbar-energy.
    """
    h0 = h0_dimension_p1(pair, r, s)
    if r == s:
        return ExperimentReport("neutral", h0, r, s, note="zero-order term (s - r) vanishes")
    if lambda_case == 0:
        if h0 == 0:
            return ExperimentReport("vacuous", h0, r, s, note="no nonzero sections, parallelism holds vacuously")
        return ExperimentReport("vacuous", h0, r, s, passed=False,
                                note="parallel-section test needs a flat fixture; none is built in n = 1")
    if lambda_case != 1 or r < s + 1:
        raise DomainError("vanishing experiment covers lambda = 1 with r >= s + 1")
    from . import ma_solver as ms

    if field_ is None or problem is None:
        cfg = _sphere_config_for(pair)
        problem = ms.assemble_problem(cfg, 1, resolution=resolution)
        field_ = None
        for e in (1.0, 0.3, 0.1):
            field_ = ms.solve_star_epsilon(problem, e, initial=None if field_ is None else field_.phi)
    cfg = problem.config
    grid = field_.grid
    tensor, dbar = trial_tensor(pair, r, s)
    metric = lambda z, chart="N": ms.solved_density(field_, problem, z, chart)
    m = r - s
    dens = np.empty(grid.size)
    u2 = np.empty(grid.size)
    du2 = np.empty(grid.size)
    theta = np.empty(grid.size)
    for c, name in enumerate("NS"):
        sel = grid.chart == c
        z = grid.z[sel]
        g = metric(z, name)
        dens[sel] = g
        u2[sel] = np.abs(tensor.components(z, name)) ** 2 * g**m
        du2[sel] = np.abs(dbar(z, name)) ** 2 * g ** (m - 1)
        th = np.empty(z.shape)
        with np.errstate(divide="ignore"):
            lp = _log_product(cfg, z, name)
        ok = np.isfinite(lp)
        th[~ok] = 0.0
        if np.any(ok):
            rho = np.log(-lp[ok])
            th[ok] = 1.0 - xi_eps(rho, min(epsilon_list))
        theta[sel] = th
    zero_order = m * grid.integrate(theta**2 * u2, dens)
    dbar_energy = grid.integrate(theta**2 * du2, dens)
    dec = truncation_error_integral(tensor, metric, cfg, epsilon_list)
    margin = zero_order - dec.integrals
    ok = bool(h0 == 0 and margin[np.argmin(dec.epsilons)] > 0 and dbar_energy > 0)
    return ExperimentReport(
        "vanishing", h0, r, s, dec.epsilons, dec.integrals, zero_order, dbar_energy, margin,
        dec.integrals / m, ok, f"solved metric at eps = {field_.epsilon:g}",
    )
