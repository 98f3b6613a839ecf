"""Centered finite differences for complex derivatives in C^n.

Everything goes through real coordinates z^p = x_p + i y_p:

    d/dz^p      = (d/dx_p - i d/dy_p) / 2
    d/dzbar^q   = (d/dx_q + i d/dy_q) / 2

so the mixed complex Hessian is a fixed linear combination of the real
second differences. Functions may return arrays of any trailing shape.
"""

from __future__ import annotations

import itertools

import numpy as np


def _directions(n):
    dirs = np.zeros((2 * n, n), dtype=complex)
    for p in range(n):
        dirs[2 * p, p] = 1.0
        dirs[2 * p + 1, p] = 1.0j
    return dirs


def _stencil(n):
    """Offsets (in units of h) of the second-order stencil, plus bookkeeping."""
    dirs = _directions(n)
    m = 2 * n
    offsets = [np.zeros(n, dtype=complex)]
    single = {}
    for a in range(m):
        for sgn in (1, -1):
            single[(a, sgn)] = len(offsets)
            offsets.append(sgn * dirs[a])
    mixed = {}
    for a, b in itertools.combinations(range(m), 2):
        for sa, sb in itertools.product((1, -1), repeat=2):
            mixed[(a, b, sa, sb)] = len(offsets)
            offsets.append(sa * dirs[a] + sb * dirs[b])
    return np.array(offsets), single, mixed


def _raw(func, z, h, want_second=True):
    """One centered-difference pass. z: (M, n); h: (M,)."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    M, n = z.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (M,))
    offsets, single, mixed = _stencil(n)
    if not want_second:
        offsets = offsets[: 1 + len(single)]
    P = offsets.shape[0]
    pts = z[:, None, :] + h[:, None, None] * offsets[None, :, :]
    vals = np.asarray(func(pts.reshape(M * P, n)))
    tail = vals.shape[1:]
    vals = vals.reshape((M, P) + tail)
    hb = h.reshape((M,) + (1,) * len(tail))
    F0 = vals[:, 0]
    m = 2 * n
    D1 = np.empty((m, M) + tail, dtype=vals.dtype)
    for a in range(m):
        D1[a] = (vals[:, single[(a, 1)]] - vals[:, single[(a, -1)]]) / (2 * hb)
    out = {"F": F0, "D1": D1}
    if want_second:
        D2 = np.empty((m, m, M) + tail, dtype=vals.dtype)
        for a in range(m):
            D2[a, a] = (vals[:, single[(a, 1)]] - 2 * F0 + vals[:, single[(a, -1)]]) / hb**2
        for a, b in itertools.combinations(range(m), 2):
            s = (
                vals[:, mixed[(a, b, 1, 1)]]
                - vals[:, mixed[(a, b, 1, -1)]]
                - vals[:, mixed[(a, b, -1, 1)]]
                + vals[:, mixed[(a, b, -1, -1)]]
            ) / (4 * hb**2)
            D2[a, b] = s
            D2[b, a] = s
        out["D2"] = D2
    return out


def _richardson(passes):
    """Extrapolate a list of results computed at h, h/2, h/4, ..."""
    table = list(passes)
    k = 1
    while len(table) > 1:
        fac = 4.0**k
        table = [(fac * table[i + 1] - table[i]) / (fac - 1) for i in range(len(table) - 1)]
        k += 1
    return table[0]


def complex_derivatives(func, z, h, levels=1, second=True):
    """First and mixed second complex derivatives of ``func`` at points ``z``.

    Returns a dict with
      F      : values, shape (M, *tail)
      d      : dF/dz^p, shape (n, M, *tail)
      dbar   : dF/dzbar^p
      ddbar  : d^2F/dz^p dzbar^q, shape (n, n, M, *tail)
    ``levels > 1`` applies Richardson extrapolation over h, h/2, ... .
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    n = z.shape[1]
    h = np.asarray(h, dtype=float)
    passes = [_raw(func, z, h / 2**k, want_second=second) for k in range(levels)]
    D1 = _richardson([p["D1"] for p in passes])
    out = {"F": passes[0]["F"]}
    xs, ys = D1[0::2], D1[1::2]
    out["d"] = 0.5 * (xs - 1j * ys)
    out["dbar"] = 0.5 * (xs + 1j * ys)
    if second:
        D2 = _richardson([p["D2"] for p in passes])
        dd = np.empty((n, n) + D2.shape[2:], dtype=complex)
        for p in range(n):
            for q in range(n):
                dd[p, q] = 0.25 * (
                    D2[2 * p, 2 * q]
                    + D2[2 * p + 1, 2 * q + 1]
                    + 1j * (D2[2 * p, 2 * q + 1] - D2[2 * p + 1, 2 * q])
                )
        out["ddbar"] = dd
    return out
