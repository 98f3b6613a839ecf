"""Two-chart finite-difference discretization of the Riemann sphere.

Chart N uses z (point [1 : z]), chart S uses w = 1/z (point [w : 1]).
Each chart is a uniform (n x n) grid on [-L, L]^2. Nodes with |z| <= r_int
are unknowns; five-point stencils that leave the disc read ghost values,
which are cubic (4x4 Lagrange) interpolants of the other chart's unknowns.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError

CHARTS = ("N", "S")


def _lagrange4(s):
    """Cubic Lagrange weights at offset s in [0,1) for nodes -1, 0, 1, 2."""
    s = np.asarray(s, dtype=float)
    return np.stack(
        [
            -s * (s - 1) * (s - 2) / 6,
            (s + 1) * (s - 1) * (s - 2) / 2,
            -(s + 1) * s * (s - 2) / 2,
            (s + 1) * s * (s - 1) / 6,
        ],
        axis=-1,
    )


def _smooth_step(y):
    """1 for y <= -1, 0 for y >= 1, with S(y) + S(-y) = 1."""
    y = np.asarray(y, dtype=float)
    out = np.where(y <= -1, 1.0, 0.0)
    mid = np.abs(y) < 1
    ym = y[mid]
    with np.errstate(over="ignore"):
        out[mid] = 1.0 / (1.0 + np.exp(4 * ym / (1 - ym * ym)))
    return out


class SphereGrid:
    def __init__(self, resolution: int, extent: float = 1.2, r_int: float = 1.1):
        n = int(resolution)
        if n < 48:
            raise DomainError("sphere grid needs resolution >= 48")
        self.n = n
        self.extent = extent
        self.r_int = r_int
        self.x = np.linspace(-extent, extent, n)
        self.h = self.x[1] - self.x[0]
        X, Y = np.meshgrid(self.x, self.x, indexing="xy")
        self.Z = X + 1j * Y  # Z[row=iy, col=ix]
        inside = np.abs(self.Z) <= r_int
        self.index = np.full((2, n, n), -1, dtype=np.int64)
        m = int(inside.sum())
        self.index[0][inside] = np.arange(m)
        self.index[1][inside] = m + np.arange(m)
        self.m_chart = m
        self.size = 2 * m
        self.z = np.concatenate([self.Z[inside], self.Z[inside]])
        self.chart = np.repeat([0, 1], m)
        self._rows, self._cols = np.nonzero(inside)
        self._build()

    # -- geometry of nodes -------------------------------------------------
    def north_coordinate(self):
        """z-coordinate of every unknown (inf for the S-chart origin)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.chart == 0, self.z, 1.0 / self.z)

    def unit_vectors(self):
        """Points of S^2 in R^3 (chart N origin = north pole)."""
        zn = self.north_coordinate()
        out = np.empty((self.size, 3))
        fin = np.isfinite(zn)
        zz = zn[fin]
        r2 = np.abs(zz) ** 2
        out[fin, 0] = 2 * zz.real / (1 + r2)
        out[fin, 1] = 2 * zz.imag / (1 + r2)
        out[fin, 2] = (1 - r2) / (1 + r2)
        out[~fin] = (0.0, 0.0, -1.0)
        return out

    # -- interpolation -----------------------------------------------------
    def _stencil(self, w):
        """Flat node indices (into chart arrays) and weights for cubic interpolation at w."""
        w = np.asarray(w, dtype=complex)
        fx = (w.real + self.extent) / self.h
        fy = (w.imag + self.extent) / self.h
        ix = np.floor(fx).astype(int)
        iy = np.floor(fy).astype(int)
        ix = np.clip(ix, 1, self.n - 3)
        iy = np.clip(iy, 1, self.n - 3)
        wx = _lagrange4(fx - ix)
        wy = _lagrange4(fy - iy)
        offs = np.arange(-1, 3)
        cols = ix[:, None] + offs[None, :]
        rows = iy[:, None] + offs[None, :]
        R = np.repeat(rows[:, :, None], 4, axis=2)
        C = np.repeat(cols[:, None, :], 4, axis=1)
        W = wy[:, :, None] * wx[:, None, :]
        return R.reshape(len(w), 16), C.reshape(len(w), 16), W.reshape(len(w), 16)

    def _other_chart_matrix(self, chart_of, zpts):
        """Sparse matrix mapping unknowns to values at points zpts of chart ``chart_of``
        by interpolating in the opposite chart."""
        other = 1 - np.asarray(chart_of)
        with np.errstate(divide="ignore"):
            w = 1.0 / np.asarray(zpts)
        R, C, W = self._stencil(w)
        cols = self.index[other[:, None], R, C]
        if np.any(cols < 0):
            raise DomainError("interpolation stencil leaves the other chart's unknowns")
        rows = np.repeat(np.arange(len(w)), 16)
        return sp.csr_matrix((W.ravel(), (rows, cols.ravel())), shape=(len(w), self.size))

    def _build(self):
        n, m = self.n, self.m_chart
        rows, cols, vals = [], [], []
        ghost_keys = {}
        ghost_rows, ghost_cols = [], []
        for c in (0, 1):
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                r2 = self._rows + di
                c2 = self._cols + dj
                me = self.index[c, self._rows, self._cols]
                nb = self.index[c, r2, c2]
                ok = nb >= 0
                rows.append(me[ok])
                cols.append(nb[ok])
                vals.append(np.ones(ok.sum()))
                for a, rr, cc in zip(me[~ok], r2[~ok], c2[~ok]):
                    key = (c, int(rr), int(cc))
                    if key not in ghost_keys:
                        ghost_keys[key] = len(ghost_keys)
                    ghost_rows.append(a)
                    ghost_cols.append(ghost_keys[key])
        keys = sorted(ghost_keys, key=ghost_keys.get)
        gch = np.array([k[0] for k in keys])
        gz = np.array([self.Z[k[1], k[2]] for k in keys])
        P = self._other_chart_matrix(gch, gz)
        S_int = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size)
        )
        S_gh = sp.csr_matrix(
            (np.ones(len(ghost_rows)), (ghost_rows, ghost_cols)), shape=(self.size, len(keys))
        )
        self.flat_laplacian = ((S_int + S_gh @ P) - 4 * sp.identity(self.size)) / self.h**2
        self.flat_laplacian = self.flat_laplacian.tocsr()
        self.n_ghost = len(keys)
        # chart completion: every node not an unknown, from the other chart
        fills = []
        for c in (0, 1):
            rr, cc = np.nonzero(self.index[c] < 0)
            fills.append((rr, cc, self._other_chart_matrix(np.full(len(rr), c), self.Z[rr, cc])))
        self._fills = fills
        # quadrature weights (without the metric density): partition of unity
        a = 0.98 * math.log(self.r_int)
        r = np.abs(self.z)
        with np.errstate(divide="ignore"):
            lr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), -np.inf)
        self.pou = _smooth_step(lr / a)
        self.cell = 2.0 * self.h**2  # omega = g i dz^dzbar = 2 g dx dy

    # -- public operations -------------------------------------------------
    def ddbar(self, u):
        """u_{z zbar} at the unknowns, in each node's own chart coordinate."""
        return (self.flat_laplacian @ u) / 4.0

    def integrate(self, values, density):
        """integral of values * density * i dz^dzbar over the sphere."""
        return float(np.sum(values * density * self.pou) * self.cell)

    def chart_array(self, u, chart):
        """Full (n x n) array of chart values, non-unknown nodes interpolated."""
        c = CHARTS.index(chart) if isinstance(chart, str) else int(chart)
        out = np.empty((self.n, self.n), dtype=np.asarray(u).dtype)
        inside = self.index[c] >= 0
        out[inside] = u[self.index[c][inside]]
        rr, cc, M = self._fills[c]
        out[rr, cc] = M @ u
        return out

    def interpolate(self, u, zpts, chart="N"):
        """Cubic interpolation of a grid scalar at arbitrary points of a chart."""
        zpts = np.atleast_1d(np.asarray(zpts, dtype=complex))
        c = CHARTS.index(chart)
        with np.errstate(divide="ignore"):
            use_other = np.abs(zpts) > 1.0
            zc = np.where(use_other, 1.0 / zpts, zpts)
        cc = np.where(use_other, 1 - c, c)
        out = np.empty(zpts.shape, dtype=float)
        for k in (0, 1):
            sel = cc == k
            if not np.any(sel):
                continue
            arr = self.chart_array(u, k)
            R, C, W = self._stencil(zc[sel])
            out[sel] = np.sum(arr[R, C] * W, axis=1)
        return out
