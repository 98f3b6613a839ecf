"""Regularized cone metrics: the chi functions, psi_eps and omega_eps.

Two models share the same assembly code:

* ``local``  -- a polydisc in C^n with flat background; factor j lives on
  {z^k = 0} for its coordinate index k and carries a Hermitian weight phi_j,
  so |s_j|^2 = |z^k|^2 exp(-phi_j).
* ``sphere`` -- the Riemann sphere in two stereographic charts, background
  c * 2 i dz^dzbar / (1+|z|^2)^2, each factor a point with the standard
  degree-one weight rescaled so that prod |s_j|^2 <= 1/e.

For every factor the metric picks up

    (1/N) [ <D's, D's> (eps^2 + |s|^2)^(tau-1)
            - (1/tau) ((eps^2 + |s|^2)^tau - eps^(2 tau)) Theta ].
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from ._fd import complex_derivatives
from .errors import DomainError, NotPositiveDefinite, OnDivisor, UnsafeTau

__all__ = [
    "QuadraticWeight",
    "DivisorFactor",
    "ConeDivisorConfig",
    "MetricSample",
    "AsymptoticsReport",
    "chi_eval",
    "chi_array",
    "chi_derivatives",
    "chi_derivatives_array",
    "regularized_potential",
    "metric_matrix",
    "metric_field",
    "potential_field",
    "ddbar_identity_residual",
    "inverse_asymptotics_report",
    "select_normalizer",
    "domination_constant",
    "local_config",
    "sphere_config",
    "factor_data",
]

FLAT = "flat-polydisc"
ROUND = "fubini-study-sphere"


# ---------------------------------------------------------------------------
# chi
# ---------------------------------------------------------------------------

# below this eps^2 the eps-correction is under 1e-10 and eps^2 itself is near underflow
TINY_EPS2 = 1e-300


def _check_chi_args(tau, epsilon, t):
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0,1), got {tau}")
    if epsilon < 0 or np.any(np.asarray(t) < 0):
        raise DomainError("epsilon and t must be nonnegative")


def _binom_series(tau, x, kmax):
    """sum_{k>=1} C(tau,k) x^k / k, for |x| <= 1/2."""
    c = 1.0
    xk = np.ones_like(x)
    total = np.zeros_like(x)
    for k in range(1, kmax + 1):
        c *= (tau - k + 1) / k
        xk = xk * x
        total = total + c * xk / k
    return total


def chi_eval(tau: float, epsilon: float, t: float) -> float:
    """chi(eps^2 + t) = (1/tau) int_0^t ((eps^2+r)^tau - eps^(2tau)) / r dr.

    The piece r <= eps^2/2 is summed from the binomial series (the
    removable singularity at r=0 is handled there); the remainder is
    integrated with adaptive Gauss-Kronrod in u = log r, where the
    integrand (eps^2 + e^u)^tau - eps^(2tau) is smooth.
    """
    _check_chi_args(tau, epsilon, t)
    t = float(t)
    if t == 0.0:
        return 0.0
    if epsilon * epsilon < TINY_EPS2:
        return t**tau / tau**2
    a = epsilon * epsilon
    a_tau = a**tau
    r0 = min(t, 0.5 * a)
    x0 = r0 / a
    # geometric with ratio <= 1/2
    series = 0.0
    c = 1.0
    xk = 1.0
    for k in range(1, 200):
        c *= (tau - k + 1) / k
        xk *= x0
        term = c * xk / k
        series += term
        if abs(term) < 1e-18 * max(1.0, abs(series)):
            break
    total = a_tau * series
    if t > r0:
        val, _ = integrate.quad(
            lambda u: (a + math.exp(u)) ** tau - a_tau,
            math.log(r0),
            math.log(t),
            epsabs=1e-14,
            epsrel=1e-13,
            limit=200,
        )
        total += val
    return total / tau


def chi_array(tau: float, epsilon: float, t) -> np.ndarray:
    """Vectorized chi via series; used on grids where quad per node is too slow.

    With X = t/eps^2 and V = 1/(1+X):
      X <= 1/2 :  tau chi = eps^(2tau) sum_k C(tau,k) X^k / k
      X >  1/2 :  tau chi = (eps^2+t)^tau (1/tau - S) - eps^(2tau)(1/tau + log X
                            - digamma(1) + digamma(1-tau)),
                  S = sum_k V^k / (k - tau).
    """
    t = np.asarray(t, dtype=float)
    _check_chi_args(tau, epsilon, t)
    if epsilon * epsilon < TINY_EPS2:
        return t**tau / tau**2
    a = epsilon * epsilon
    X = t / a
    out = np.empty_like(X)
    small = X <= 0.5
    if np.any(small):
        out[small] = a**tau * _binom_series(tau, X[small], 60) / tau
    big = ~small
    if np.any(big):
        Xb = X[big]
        V = 1.0 / (1.0 + Xb)
        S = np.zeros_like(V)
        Vk = np.ones_like(V)
        for k in range(1, 110):
            Vk = Vk * V
            S = S + Vk / (k - tau)
        const = 1.0 / tau - special.digamma(1.0) + special.digamma(1.0 - tau)
        val = (a + t[big]) ** tau * (1.0 / tau - S) - a**tau * (const + np.log(Xb))
        out[big] = val / tau
    return out


def chi_derivatives_array(tau, epsilon, t):
    """(chi', chi'') at eps^2 + t, vectorized; t=0 allowed when eps > 0."""
    t = np.asarray(t, dtype=float)
    _check_chi_args(tau, epsilon, t)
    if epsilon * epsilon < TINY_EPS2:
        if np.any(t == 0):
            raise DomainError("chi' is singular at t = eps = 0")
        return t ** (tau - 1) / tau, (tau - 1) * t ** (tau - 2) / tau
    a = epsilon * epsilon
    x = t / a
    d1 = np.empty_like(x)
    tiny = x < 1e-12
    d1[tiny] = a ** (tau - 1) * (1 + 0.5 * (tau - 1) * x[tiny])
    ok = ~tiny
    d1[ok] = a ** (tau - 1) * np.expm1(tau * np.log1p(x[ok])) / (tau * x[ok])
    d2 = np.empty_like(x)
    small = x < 0.1
    if np.any(small):
        xs = x[small]
        c = tau  # C(tau,1)
        acc = np.zeros_like(xs)
        xp = np.ones_like(xs)
        for k in range(2, 42):
            c *= (tau - k + 1) / k
            acc = acc + (k - 1) * c * xp
            xp = xp * xs
        d2[small] = a ** (tau - 2) * acc / tau
    big = ~small
    if np.any(big):
        tb = t[big]
        d2[big] = (
            tau * (a + tb) ** (tau - 1) / tb - ((a + tb) ** tau - a**tau) / tb**2
        ) / tau
    return d1, d2


def chi_derivatives(tau: float, epsilon: float, t: float):
    """Scalar (chi', chi'') with the t -> 0 limits when eps > 0."""
    d1, d2 = chi_derivatives_array(tau, epsilon, np.array([float(t)]))
    return float(d1[0]), float(d2[0])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticWeight:
    """phi(z) = sum_{pq} A_pq z^p conj(z^q), A Hermitian (so phi is real)."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        if not np.allclose(A, A.conj().T):
            raise DomainError("weight matrix must be Hermitian")
        object.__setattr__(self, "A", A)

    def value(self, z):
        return np.real(np.einsum("...p,pq,...q->...", z, self.A, z.conj()))

    def grad(self, z):
        # d phi / d z^p
        return np.einsum("pq,...q->...p", self.A, z.conj())

    def hess(self, z):
        return np.broadcast_to(self.A, z.shape[:-1] + self.A.shape)


def zero_weight(n):
    return QuadraticWeight(np.zeros((n, n)))


@dataclass(frozen=True)
class DivisorFactor:
    tau: float
    locus: object  # coordinate index (local) or point of P^1 (sphere; math.inf allowed)
    hermitian_weight: Optional[QuadraticWeight] = None

    @property
    def a(self):
        return 1.0 - self.tau


@dataclass(frozen=True)
class ConeDivisorConfig:
    dimension: int
    factors: tuple
    normalizer: float = 1.0
    background: str = FLAT
    model_kind: str = "local"
    allow_unsafe_tau: bool = False
    background_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.dimension < 1:
            raise DomainError("dimension must be positive")
        if self.model_kind not in ("local", "sphere"):
            raise DomainError(f"unknown model kind {self.model_kind!r}")
        for f in self.factors:
            if not (0.0 < f.tau < 1.0):
                raise DomainError(f"tau={f.tau} outside (0,1)")
            if f.tau > 0.5 and not self.allow_unsafe_tau:
                raise UnsafeTau(f"tau={f.tau} > 1/2 requires allow-unsafe-tau")
        if not self.normalizer > 0:
            raise DomainError("normalizer must be positive")
        if self.model_kind == "sphere":
            if self.dimension != 1:
                raise DomainError("sphere model is one dimensional")
            pts = [_homog(f.locus) for f in self.factors]
            for i in range(len(pts)):
                for j in range(i):
                    if abs(np.vdot(pts[i], pts[j])) > 1 - 1e-12:
                        raise DomainError("sphere factor points must be distinct")
        else:
            idx = [int(f.locus) for f in self.factors]
            if len(set(idx)) != len(idx) or any(i < 0 or i >= self.dimension for i in idx):
                raise DomainError("local factors need distinct coordinate indices < n")

    @property
    def taus(self):
        return np.array([f.tau for f in self.factors])

    @property
    def weight_constant(self):
        # sphere only: c with prod |s_j|^2 <= c^{|J|} <= 1/e
        return math.exp(-1.0 / len(self.factors)) if self.factors else 1.0

    def replace(self, **kw):
        return replace(self, **kw)


def _homog(p):
    """Unit homogeneous coordinates [p0 : p1] with z = p1/p0 in the north chart."""
    if p is None or (isinstance(p, (float, int)) and math.isinf(p)) or p == "inf":
        return np.array([0.0, 1.0], dtype=complex)
    p = complex(p)
    v = np.array([1.0, p], dtype=complex)
    return v / np.linalg.norm(v)


def local_config(taus, *, weights=None, dimension=None, normalizer=1.0, allow_unsafe_tau=False):
    taus = list(taus)
    n = dimension or len(taus)
    if weights is None:
        weights = [None] * len(taus)
    factors = tuple(
        DivisorFactor(float(t), j, w if w is not None else zero_weight(n))
        for j, (t, w) in enumerate(zip(taus, weights))
    )
    cfg = ConeDivisorConfig(n, factors, 1.0, FLAT, "local", allow_unsafe_tau)
    if normalizer == "auto":
        normalizer = select_normalizer(cfg)
    return cfg.replace(normalizer=float(normalizer))


def sphere_config(points, taus, *, normalizer="auto", scale=1.0, allow_unsafe_tau=False):
    points = list(points)
    if np.isscalar(taus):
        taus = [taus] * len(points)
    factors = tuple(DivisorFactor(float(t), p) for p, t in zip(points, taus))
    cfg = ConeDivisorConfig(1, factors, 1.0, ROUND, "sphere", allow_unsafe_tau, float(scale))
    if normalizer == "auto":
        normalizer = select_normalizer(cfg)
    return cfg.replace(normalizer=float(normalizer))


# ---------------------------------------------------------------------------
# per-factor data: |s|^2, D's components, Theta
# ---------------------------------------------------------------------------

def _as_points(config, z):
    z = np.asarray(z, dtype=complex)
    if config.dimension == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != config.dimension:
        raise DomainError(f"point has {z.shape[-1]} coordinates, expected {config.dimension}")
    return z


def background_density(config, z):
    """omega as an (..., n, n) matrix in the given coordinates."""
    z = _as_points(config, z)
    n = config.dimension
    if config.background == FLAT:
        return np.broadcast_to(config.background_scale * np.eye(n), z.shape[:-1] + (n, n)).astype(complex)
    r2 = np.abs(z[..., 0]) ** 2
    g = config.background_scale * 2.0 / (1.0 + r2) ** 2
    return g[..., None, None].astype(complex)


def factor_data(config, z, chart="N"):
    """For each factor: (t = |s|^2, v, Theta) at points z.

    v is the (1,0)-covector with <D's, D's> = v v^*, shapes (..., n);
    Theta is the curvature matrix (..., n, n) of the weight.
    """
    z = _as_points(config, z)
    out = []
    if config.model_kind == "local":
        for f in config.factors:
            k = int(f.locus)
            w = f.hermitian_weight or zero_weight(config.dimension)
            phi = w.value(z)
            e = np.exp(-phi)
            zk = z[..., k]
            t = np.abs(zk) ** 2 * e
            v = -zk[..., None] * w.grad(z)
            v[..., k] += 1.0
            v = v * np.sqrt(e)[..., None]
            out.append((t, v, w.hess(z)))
        return out
    c = config.weight_constant
    x = z[..., 0]
    r2 = np.abs(x) ** 2
    theta = (1.0 / (1.0 + r2) ** 2)[..., None, None]
    for f in config.factors:
        p0, p1 = _homog(f.locus)
        if chart == "N":
            det = p1 - x * p0
            num = p0 + p1 * np.conj(x)
        else:
            det = x * p1 - p0
            num = p1 + p0 * np.conj(x)
        t = c * np.abs(det) ** 2 / (1.0 + r2)
        v = (num * math.sqrt(c) / (1.0 + r2) ** 1.5)[..., None]
        out.append((t.real, v, theta))
    return out


# ---------------------------------------------------------------------------
# metric, potential
# ---------------------------------------------------------------------------

def _assemble(config, z, epsilon, chart="N"):
    z = _as_points(config, z)
    g = np.array(background_density(config, z), dtype=complex)
    psi = np.zeros(z.shape[:-1])
    a = epsilon * epsilon
    N = config.normalizer
    for f, (t, v, Th) in zip(config.factors, factor_data(config, z, chart)):
        tau = f.tau
        if epsilon == 0.0 and np.any(t == 0):
            raise OnDivisor("eps = 0 evaluation on a divisor component")
        base = a + t
        first = base ** (tau - 1.0)
        second = (base**tau - a**tau) / tau
        g += (
            first[..., None, None] * np.einsum("...p,...q->...pq", v, v.conj())
            - second[..., None, None] * Th
        ) / N
        psi += chi_array(tau, epsilon, t) / N
    return g, psi


def metric_field(config, z, epsilon, chart="N"):
    """g_{p qbar} at an array of points, shape (..., n, n). No PD check."""
    return _assemble(config, z, epsilon, chart)[0]


def potential_field(config, z, epsilon, chart="N"):
    return _assemble(config, z, epsilon, chart)[1]


@dataclass
class MetricSample:
    point: np.ndarray
    epsilon: float
    g: np.ndarray
    g_inv: np.ndarray
    psi: float


def metric_matrix(config, point, epsilon, chart="N") -> MetricSample:
    z = _as_points(config, np.asarray(point, dtype=complex))
    g, psi = _assemble(config, z, float(epsilon), chart)
    g = 0.5 * (g + g.conj().T)
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            f"metric not positive definite at {point} (eps={epsilon}, N={config.normalizer})"
        ) from None
    Linv = np.linalg.inv(L)
    g_inv = Linv.conj().T @ Linv
    return MetricSample(z, float(epsilon), g, g_inv, float(psi))


def regularized_potential(config, point, epsilon, chart="N") -> float:
    z = _as_points(config, np.asarray(point, dtype=complex))
    if epsilon == 0.0:
        for t, _, _ in factor_data(config, z, chart):
            if t == 0:
                raise OnDivisor("psi_0 requested on the divisor")
    return float(
        sum(
            chi_eval(f.tau, float(epsilon), float(t)) for f, (t, _, _) in zip(config.factors, factor_data(config, z, chart))
        )
        / config.normalizer
    )


# ---------------------------------------------------------------------------
# N and the domination constant gamma
# ---------------------------------------------------------------------------

def _default_samples(config):
    if config.model_kind == "sphere":
        rs = np.linspace(0.0, 1.1, 12)
        ang = np.exp(2j * np.pi * np.arange(16) / 16)
        return (rs[:, None] * ang[None, :]).ravel()[:, None]
    n = config.dimension
    vals = np.array([0.0, 0.5, 1.0, 0.5j, 1j, -0.5, -1.0, -0.5j, -1j, 0.7 + 0.7j])
    grids = np.meshgrid(*([vals] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _theta_coefficients(config, samples):
    """sup over samples (and eps >= 0) of the subtracted Theta-term, per factor."""
    samples = _as_points(config, samples)
    if config.model_kind == "sphere":
        # same coordinates read in both charts covers the whole sphere
        halves = [factor_data(config, samples, "N"), factor_data(config, samples, "S")]
        data = [
            (np.concatenate([halves[0][j][0], halves[1][j][0]]), None,
             np.concatenate([halves[0][j][2], halves[1][j][2]]))
            for j in range(len(config.factors))
        ]
        samples = np.concatenate([samples, samples])
    else:
        data = factor_data(config, samples, "N")
    omega = background_density(config, samples)
    kappas = []
    for f, (t, _, Th) in zip(config.factors, data):
        # largest eigenvalue of Theta relative to omega; the eps-dependent factor
        # ((eps^2+t)^tau - eps^(2tau))/tau is largest at eps = 0
        Linv = np.linalg.inv(np.linalg.cholesky(omega))
        rel = Linv @ Th @ np.conj(np.swapaxes(Linv, -1, -2))
        lam = np.linalg.eigvalsh(0.5 * (rel + np.conj(np.swapaxes(rel, -1, -2))))[..., -1]
        kap = np.maximum(lam, 0.0) * t**f.tau / f.tau
        kappas.append(float(np.max(kap)) if kap.size else 0.0)
    return np.array(kappas)


def select_normalizer(config, samples=None) -> float:
    """N = 2 |J| sup(kappa) + 1, so omega_eps >= omega/2 on the samples."""
    if not config.factors:
        return 1.0
    if samples is None:
        samples = _default_samples(config)
    kap = _theta_coefficients(config, samples)
    return 2.0 * len(config.factors) * float(kap.max()) + 1.0


def domination_constant(config, samples=None) -> float:
    """gamma with omega_eps >= gamma omega for all eps on the sample set."""
    if not config.factors:
        return 1.0
    if samples is None:
        samples = _default_samples(config)
    kap = _theta_coefficients(config, samples)
    gamma = 1.0 - float(kap.sum()) / config.normalizer
    if gamma <= 0:
        raise NotPositiveDefinite(f"normalizer N={config.normalizer} too small (gamma={gamma:.3g})")
    return gamma


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def ddbar_identity_residual(config, factor_index, point, epsilon, step) -> float:
    """max |i ddbar chi_j(eps^2+|s_j|^2)  -  closed form| with centered differences."""
    if epsilon <= 0 or step <= 0:
        raise DomainError("need eps > 0 and step > 0")
    f = config.factors[factor_index]
    z = _as_points(config, np.asarray(point, dtype=complex)).reshape(1, -1)

    def F(pts):
        t = factor_data(config, pts)[factor_index][0]
        return chi_array(f.tau, epsilon, t)

    fd = complex_derivatives(F, z, step, levels=1)["ddbar"][:, :, 0]
    t, v, Th = (x[0] for x in factor_data(config, z)[factor_index])
    a = epsilon * epsilon
    closed = (a + t) ** (f.tau - 1) * np.outer(v, v.conj()) - ((a + t) ** f.tau - a**f.tau) / f.tau * Th
    return float(np.max(np.abs(fd - closed)))


@dataclass
class AsymptoticsReport:
    epsilons: np.ndarray
    radii: np.ndarray
    # diag[k] has shape (len(eps), len(radii)): g^{kk} (eps^2+|z^k|^2)^{tau_k - 1}
    diag: dict = field(default_factory=dict)
    base: dict = field(default_factory=dict)  # eps^2 + |z^k|^2
    offdiag_max: np.ndarray = None  # sup over k != l of the normalized g^{kl}
    slopes: dict = field(default_factory=dict)
    limit: float = 1.0


def inverse_asymptotics_report(config, ray_direction, epsilon_list, radius_list) -> AsymptoticsReport:
    """Samples z = r * direction; fits log|Q/N - 1| against log(eps^2 + |z^k|^2).

    Weights are taken to vanish at the origin (as in adapted coordinates),
    so the limit of g^{kk}(eps^2+|z^k|^2)^{tau-1} is N.
    """
    if config.model_kind != "local":
        raise DomainError("inverse asymptotics are a local-model diagnostic")
    d = np.asarray(ray_direction, dtype=complex)
    d = d / np.linalg.norm(d)
    eps = np.asarray(epsilon_list, dtype=float)
    rad = np.asarray(radius_list, dtype=float)
    rep = AsymptoticsReport(eps, rad, limit=config.normalizer)
    n = config.dimension
    off = np.zeros((len(eps), len(rad)))
    taus = {int(f.locus): f.tau for f in config.factors}
    for k in taus:
        rep.diag[k] = np.zeros((len(eps), len(rad)))
        rep.base[k] = np.zeros((len(eps), len(rad)))
    for i, e in enumerate(eps):
        for j, r in enumerate(rad):
            ms = metric_matrix(config, r * d, e)
            # g^{p qbar} in the index convention sum_q g_{i qbar} g^{p qbar} = delta
            ginv = ms.g_inv.T
            for k, tk in taus.items():
                x = e * e + abs(r * d[k]) ** 2
                rep.base[k][i, j] = x
                rep.diag[k][i, j] = ginv[k, k].real * x ** (tk - 1)
            m = 0.0
            for k in range(n):
                for l in range(n):
                    if k == l:
                        continue
                    xk = e * e + abs(r * d[k]) ** 2
                    xl = e * e + abs(r * d[l]) ** 2
                    wk = xk ** (1 - taus[k]) if k in taus else 1.0
                    wl = xl ** (1 - taus[l]) if l in taus else 1.0
                    m = max(m, abs(ginv[k, l]) / (wk * wl))
            off[i, j] = m
    rep.offdiag_max = off
    for k in taus:
        err = np.abs(rep.diag[k] / config.normalizer - 1.0).ravel()
        xb = rep.base[k].ravel()
        good = err > 0
        if good.sum() >= 2:
            rep.slopes[k] = float(np.polyfit(np.log(xb[good]), np.log(err[good]), 1)[0])
        else:
            rep.slopes[k] = float("nan")
    return rep
