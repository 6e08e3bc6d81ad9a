"""Compiled RK4 kernels for the geodesic/transport system of the built-in backends.

State layout is a flat vector ``[x (n), w (n), V_0 (n), ..., V_{m-1} (n)]`` in chart
coordinates: position, geodesic velocity and ``m`` vectors carried by parallel
translation.
"""

import numpy as np
from numba import njit

HALF_SPACE = 1
STEREOGRAPHIC = 2

# chart ids for STEREOGRAPHIC: 0 -> phi_plus (south pole excluded), 1 -> phi_minus
SWITCH_BAND = 0.1

OK = 0
LEFT_DOMAIN = 1


@njit(cache=True)
def _contract(kind, x, a, b, out):
    # out^k = Gamma^k_ij a^i b^j
    if kind == HALF_SPACE:
        inv = 1.0 / x[2]
        ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
        for k in range(3):
            out[k] = -(a[2] * b[k] + a[k] * b[2]) * inv
        out[2] += ab * inv
    elif kind == STEREOGRAPHIC:
        s = 1.0 + x[0] * x[0] + x[1] * x[1]
        d0 = -2.0 * x[0] / s
        d1 = -2.0 * x[1] / s
        da = d0 * a[0] + d1 * a[1]
        db = d0 * b[0] + d1 * b[1]
        ab = a[0] * b[0] + a[1] * b[1]
        out[0] = a[0] * db + b[0] * da - ab * d0
        out[1] = a[1] * db + b[1] * da - ab * d1
    else:
        for k in range(out.shape[0]):
            out[k] = 0.0


@njit(cache=True)
def _rhs(kind, y, n, m, out, tmp):
    x = y[:n]
    w = y[n:2 * n]
    for k in range(n):
        out[k] = w[k]
    _contract(kind, x, w, w, tmp)
    for k in range(n):
        out[n + k] = -tmp[k]
    for j in range(m):
        lo = 2 * n + j * n
        _contract(kind, x, w, y[lo:lo + n], tmp)
        for k in range(n):
            out[lo + k] = -tmp[k]


@njit(cache=True)
def _switch_chart(kind, chart, y, n, m):
    if kind != STEREOGRAPHIC:
        return chart
    r2 = y[0] * y[0] + y[1] * y[1]
    if chart == 0:
        x3 = (1.0 - r2) / (1.0 + r2)
        if x3 >= -SWITCH_BAND:
            return chart
    else:
        x3 = (r2 - 1.0) / (1.0 + r2)
        if x3 <= SWITCH_BAND:
            return chart
    # transition between the two stereographic charts is the inversion xi -> xi/|xi|^2
    p0 = y[0]
    p1 = y[1]
    r4 = r2 * r2
    d00 = (r2 - 2.0 * p0 * p0) / r4
    d01 = -2.0 * p0 * p1 / r4
    d11 = (r2 - 2.0 * p1 * p1) / r4
    for j in range(m + 1):
        lo = n + j * n
        a = y[lo]
        b = y[lo + 1]
        y[lo] = d00 * a + d01 * b
        y[lo + 1] = d01 * a + d11 * b
    y[0] = p0 / r2
    y[1] = p1 / r2
    return 1 - chart


@njit(cache=True)
def _left_domain(kind, y):
    if kind == HALF_SPACE:
        return not (y[2] > 0.0)
    return False


@njit(cache=True)
def flow(kind, chart, y0, n, m, h, nsteps, record):
    """Integrate ``nsteps`` classical RK4 steps of size ``h``.

    Returns ``(status, chart, y, path, path_charts)``; the path arrays are empty
    unless ``record`` is set.
    """
    size = y0.shape[0]
    y = y0.copy()
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    stage = np.empty(size)
    tmp = np.empty(n)
    rows = nsteps + 1 if record else 0
    path = np.empty((rows, size))
    charts = np.empty(rows, dtype=np.int64)
    if record:
        path[0] = y
        charts[0] = chart
    for s in range(nsteps):
        _rhs(kind, y, n, m, k1, tmp)
        for i in range(size):
            stage[i] = y[i] + 0.5 * h * k1[i]
        _rhs(kind, stage, n, m, k2, tmp)
        for i in range(size):
            stage[i] = y[i] + 0.5 * h * k2[i]
        _rhs(kind, stage, n, m, k3, tmp)
        for i in range(size):
            stage[i] = y[i] + h * k3[i]
        _rhs(kind, stage, n, m, k4, tmp)
        for i in range(size):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if _left_domain(kind, y):
            return LEFT_DOMAIN, chart, y, path[:s + 1], charts[:s + 1]
        chart = _switch_chart(kind, chart, y, n, m)
        if record:
            path[s + 1] = y
            charts[s + 1] = chart
    return OK, chart, y, path, charts
