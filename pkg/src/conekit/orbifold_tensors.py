"""Orbifold tensor bundles T^r_s(X|D): generator exponents, h^0 on P^1,
the # contraction and norm-based boundedness checks.

Tensors are stored as arrays of components u[...points..., i_1..i_r, j_1..j_s]
(contravariant slots first). Metrics are g[...points..., p, q] = g_{p qbar}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import DomainError

SNAP = 1e-12


def _ceil(x):
    if isinstance(x, (Fraction, int)):
        return math.ceil(x)
    k = round(x)
    if abs(x - k) <= SNAP:
        return int(k)
    return math.ceil(x)


def _multiplicity(I, n):
    h = [0] * n
    for i in I:
        h[int(i)] += 1
    return h


def generator_exponents(I, J, weights) -> np.ndarray:
    """ceil((h_I(i) - h_J(i)) a_i) per divisor index i."""
    n = len(weights)
    hI, hJ = _multiplicity(I, n), _multiplicity(J, n)
    out = []
    for i, a in enumerate(weights):
        d = hI[i] - hJ[i]
        out.append(_ceil(d * a) if isinstance(a, (Fraction, int)) else _ceil(d * float(a)))
    return np.array(out, dtype=int)


@dataclass(frozen=True)
class OrbifoldPairP1:
    points: tuple  # complex numbers or "inf"
    weights: tuple  # a_i = 1 - tau_i

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise DomainError("one weight per point")
        seen = set()
        for p in self.points:
            key = "inf" if p == "inf" else complex(p)
            if key in seen:
                raise DomainError("points must be distinct")
            seen.add(key)
        for a in self.weights:
            if not 0 < a < 1:
                raise DomainError("weights must lie in (0,1)")

    @property
    def total_weight(self):
        return sum(self.weights)


def line_bundle_degree(pair: OrbifoldPairP1, r, s) -> int:
    m = r - s
    return 2 * m - sum(_ceil(m * a) if isinstance(a, (Fraction, int)) else _ceil(m * float(a)) for a in pair.weights)


def h0_dimension_p1(pair: OrbifoldPairP1, r, s) -> int:
    """T^r_s(X|D) on P^1 is O(d), d = 2m - sum ceil(m a_i); h^0 = max(0, d+1)."""
    return max(0, line_bundle_degree(pair, r, s) + 1)


def h0_monomial_count(pair: OrbifoldPairP1, r, s) -> int:
    """Independent count: monomials z^k (d/dz)^m, k = 0..2m, against the vanishing orders.

    Works in the coordinate where the first point sits at 0 and a second at
    infinity when possible; points elsewhere impose derivative conditions on
    the coefficient vector, counted by exact rank over Q.
    """
    m = r - s
    e = [_ceil(m * a) if isinstance(a, (Fraction, int)) else _ceil(m * float(a)) for a in pair.weights]
    finite = [(p, ei) for p, ei in zip(pair.points, e) if p != "inf"]
    at_inf = sum(ei for p, ei in zip(pair.points, e) if p == "inf")
    poles = sum(max(0, -ei) for _, ei in finite)
    top = 2 * m + poles - at_inf  # highest admissible monomial degree of the numerator
    if top < 0:
        return 0
    conds = []
    for p, ei in finite:
        p = Fraction(p) if not isinstance(p, complex) else p
        for k in range(max(ei, 0)):
            conds.append([math.perm(j, k) * p ** (j - k) if j >= k else 0 for j in range(top + 1)])
    if not conds:
        return top + 1
    return top + 1 - _exact_rank(conds)


def _exact_rank(rows):
    M = [[Fraction(x) if not isinstance(x, complex) else x for x in r] for r in rows]
    rank, col, ncol = 0, 0, len(M[0])
    while rank < len(M) and col < ncol:
        piv = next((i for i in range(rank, len(M)) if M[i][col] != 0), None)
        if piv is None:
            col += 1
            continue
        M[rank], M[piv] = M[piv], M[rank]
        for i in range(rank + 1, len(M)):
            if M[i][col] != 0:
                f = M[i][col] / M[rank][col]
                M[i] = [a - f * b for a, b in zip(M[i], M[rank])]
        rank += 1
        col += 1
    return rank


# ---------------------------------------------------------------------------
# the # operator and pointwise norms
# ---------------------------------------------------------------------------

@dataclass
class TensorSpec:
    """Type (r, s) tensor. In n = 1 the index multisets are forced: I = (0,)*r, J = (0,)*s."""

    r: int
    s: int
    components: object  # array (..., n^r, n^s), or a callable of points in local mode
    dimension: int = 1
    I: tuple = None
    J: tuple = None

    def __post_init__(self):
        if self.r < 0 or self.s < 0:
            raise DomainError("tensor degrees must be nonnegative")
        if self.I is None:
            self.I = (0,) * self.r if self.dimension == 1 else None
        if self.J is None:
            self.J = (0,) * self.s if self.dimension == 1 else None
        if self.I is not None and len(self.I) != self.r:
            raise DomainError("|I| must equal r")
        if self.J is not None and len(self.J) != self.s:
            raise DomainError("|J| must equal s")

    @property
    def m(self):
        return self.r - self.s

    def values(self, pts=None):
        if callable(self.components):
            return np.asarray(self.components(pts))
        return np.asarray(self.components)


def _inverse_conj_layout(g):
    """h^{p qbar} with sum_q g_{i qbar} h^{p qbar} = delta, returned as H[p, q]."""
    return np.swapaxes(np.linalg.inv(g), -1, -2)


def sharp_contraction(u, g, r, s):
    """#u of type (s, r): conj(u), contravariant slots lowered with g, covariant raised.

    (#v)_alpha = sum_beta conj(v^beta) g_{alpha betabar}
    (#rho)^i   = sum_p conj(rho_p) g^{i pbar}
    """
    u = np.asarray(u, dtype=complex)
    g = np.asarray(g, dtype=complex)
    k = r + s
    lead = u.ndim - k
    out = np.conj(u)
    H = _inverse_conj_layout(g)
    for slot in range(k):
        ax = lead + slot
        M = g if slot < r else H
        # contract index `slot` of out with the second index of M
        out = np.moveaxis(out, ax, -1)
        out = np.einsum("...b,...ab->...a", out, _bcast(M, out.ndim - 1, lead))
        out = np.moveaxis(out, -1, ax)
    # old contravariant block (now lowered) goes last, old covariant (now raised) first
    perm = list(range(lead)) + [lead + r + j for j in range(s)] + [lead + i for i in range(r)]
    return np.transpose(out, perm)


def _bcast(M, target_ndim, lead):
    """Insert singleton axes so that M[..., a, b] lines up with an array whose
    leading ``lead`` axes are points."""
    extra = target_ndim - lead  # uncontracted tensor slots between points and (a, b)
    if extra <= 0 or M.ndim == 2:
        return M
    shape = M.shape[:-2] + (1,) * extra + M.shape[-2:]
    return M.reshape(shape)


def tensor_norm_sq(u, g, r, s):
    """|u|^2 = sum u^I_J conj(u^K_L) prod g_{i kbar} prod g^{j lbar}."""
    u = np.asarray(u, dtype=complex)
    g = np.asarray(g, dtype=complex)
    lead = u.ndim - r - s
    H = np.linalg.inv(g)  # H[l, j] = g^{j lbar}
    v = u
    for slot in range(r + s):
        ax = lead + slot
        # contravariant: sum_i u^i g_{i kbar}; covariant: sum_j u_j g^{j lbar}
        M = g if slot < r else np.swapaxes(H, -1, -2)
        v = np.moveaxis(v, ax, -1)
        v = np.einsum("...i,...ik->...k", v, _bcast(M, v.ndim - 1, lead))
        v = np.moveaxis(v, -1, ax)
    axes = tuple(range(lead, u.ndim))
    return np.real(np.sum(v * np.conj(u), axis=axes))


# ---------------------------------------------------------------------------
# boundedness near cone points (complex dimension one)
# ---------------------------------------------------------------------------

@dataclass
class NormReport:
    sup: float
    inf: float
    profiles: dict  # point index -> (radii, mean |u|^2 on each circle)
    exponents: dict  # fitted d log|u|^2 / d log r at the innermost radii
    bounded: bool


def cone_metric_density(tau):
    """omega_o = |z|^(2(tau-1)) i dz^dzbar, the flat model cone."""
    return lambda z: np.abs(z) ** (2 * (tau - 1.0))


def boundedness_check(tensor: TensorSpec, metric_field: Callable, pair: OrbifoldPairP1,
                      sample_points=None, kmax=30, n_angles=16) -> NormReport:
    """n = 1: |u|^2_g = |u|^2 g^(r-s) on log-spaced circles |z - p| = 2^-k.

    ``tensor.components`` and ``metric_field`` are callables of chart points.
    Points at infinity are probed through w = 1/z (components transformed by
    (dw/dz)^(r-s)); this is skipped when the callables are chart-local only.
    """
    m = tensor.r - tensor.s
    radii = 2.0 ** -np.arange(1, kmax + 1)
    ang = np.exp(2j * np.pi * (np.arange(n_angles) + 0.5) / n_angles)
    profiles, expo = {}, {}
    sup, inf = -np.inf, np.inf
    for idx, p in enumerate(pair.points):
        if p == "inf":
            continue
        p = complex(p)
        vals = []
        for r_ in radii:
            z = p + r_ * ang
            nrm = np.abs(tensor.values(z)) ** 2 * np.asarray(metric_field(z), dtype=float) ** m
            vals.append(float(np.mean(nrm)))
            sup, inf = max(sup, float(nrm.max())), min(inf, float(nrm.min()))
        vals = np.array(vals)
        profiles[idx] = (radii, vals)
        tail = slice(kmax - 8, kmax)
        with np.errstate(divide="ignore"):
            lv = np.log(vals[tail])
        if np.all(np.isfinite(lv)):
            expo[idx] = float(np.polyfit(np.log(radii[tail]), lv, 1)[0])
        else:
            expo[idx] = float("inf")  # identically zero near the point
    if sample_points is not None:
        z = np.asarray(sample_points, dtype=complex)
        nrm = np.abs(tensor.values(z)) ** 2 * np.asarray(metric_field(z), dtype=float) ** m
        sup, inf = max(sup, float(nrm.max())), min(inf, float(nrm.min()))
    bounded = all(e >= -1e-6 for e in expo.values()) and np.isfinite(sup)
    return NormReport(float(sup), float(inf), profiles, expo, bool(bounded))


def generator_tensor(pair: OrbifoldPairP1, r, s, point_index=0):
    """Local generator (z - p)^e (d/dz)^r (dz)^s at one finite point, e = ceil(m a)."""
    p = complex(pair.points[point_index])
    a = pair.weights[point_index]
    m = r - s
    e = _ceil(m * a) if isinstance(a, (Fraction, int)) else _ceil(m * float(a))
    return TensorSpec(r, s, lambda z: (np.asarray(z) - p) ** e), e


def fixture_family(max_points=6, weights=(Fraction(1, 3), Fraction(1, 2), Fraction(2, 3), Fraction(3, 4))):
    """Pairs on rational points 0, inf, 1, -1, 2, 1/2 with every weight assignment
    up to permutation (weights nondecreasing along the point list)."""
    import itertools

    pts = [0, "inf", 1, -1, 2, Fraction(1, 2)]
    out = []
    for k in range(0, max_points + 1):
        for ws in itertools.combinations_with_replacement(weights, k):
            out.append(OrbifoldPairP1(tuple(pts[:k]), tuple(ws)))
    return out
