"""Numba kernel: Dormand-Prince 5(4) with dense output for the Lorenz field.

The kernel integrates either the 3-dimensional Lorenz system or the
12-dimensional system augmented with the variational equations (state
followed by the row-major 3x3 fundamental matrix).  Integration runs in
elapsed time ``tau >= 0``; ``direction = -1`` integrates the reversed field.

Optionally the kernel stops at the first valid crossing of the plane
``x3 = plane`` that corresponds to a downward crossing in forward time and
whose in-plane point lies inside the chart rectangle.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ST_END = 0
ST_HIT = 1
ST_ESCAPE = 2
ST_STEPFAIL = 3

# Dormand-Prince coefficients.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
A71, A73, A74, A75, A76 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
D1, D3, D4, D5, D6, D7 = (-12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
                          -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                          -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)


@njit(cache=True)
def _rhs(y, out, sigma, r, b, sgn):
    x1 = y[0]
    x2 = y[1]
    x3 = y[2]
    out[0] = sgn * sigma * (x2 - x1)
    out[1] = sgn * (r * x1 - x2 - x1 * x3)
    out[2] = sgn * (x1 * x2 - b * x3)
    if y.shape[0] == 12:
        # d/dt Phi = J Phi, Phi row-major in y[3:12]
        j00, j01, j02 = -sigma, sigma, 0.0
        j10, j11, j12 = r - x3, -1.0, -x1
        j20, j21, j22 = x2, x1, -b
        for c in range(3):
            p0 = y[3 + c]
            p1 = y[6 + c]
            p2 = y[9 + c]
            out[3 + c] = sgn * (j00 * p0 + j01 * p1 + j02 * p2)
            out[6 + c] = sgn * (j10 * p0 + j11 * p1 + j12 * p2)
            out[9 + c] = sgn * (j20 * p0 + j21 * p1 + j22 * p2)


@njit(cache=True)
def _dense(coef, theta, out):
    th1 = 1.0 - theta
    for i in range(out.shape[0]):
        out[i] = coef[0, i] + theta * (coef[1, i] + th1 * (coef[2, i] + theta * (
            coef[3, i] + th1 * coef[4, i])))


@njit(cache=True)
def _dense_x3(coef, theta):
    th1 = 1.0 - theta
    return coef[0, 2] + theta * (coef[1, 2] + th1 * (coef[2, 2] + theta * (
        coef[3, 2] + th1 * coef[4, 2])))


@njit(cache=True)
def _inside(x1, x2, center, rect_inv):
    w0 = x1 - center[0]
    w1 = x2 - center[1]
    u = rect_inv[0, 0] * w0 + rect_inv[0, 1] * w1
    v = rect_inv[1, 0] * w0 + rect_inv[1, 1] * w1
    return abs(u) <= 1.0 and abs(v) <= 1.0


@njit(cache=True)
def dopri_run(y0, t_end, direction, sigma, r, b, plane, event, center, rect_inv,
              rtol, atol, hmax, trap_radius, record):
    """Integrate from ``y0`` for elapsed time up to ``t_end``.

    Returns
    -------
    status : int
    t : float
        Elapsed time at termination (hit time if ``status == ST_HIT``).
    y : ndarray
        State at termination.
    n_steps, n_grazing : int
    rec_t, rec_h : ndarray, shape (m,)
        Start and full length of each accepted step (only if ``record``).
    rec_c : ndarray, shape (m, 5, dim)
        Dense-output coefficients per step (only if ``record``).
    """
    dim = y0.shape[0]
    sgn = float(direction)
    y = y0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    k5 = np.empty(dim)
    k6 = np.empty(dim)
    k7 = np.empty(dim)
    ytmp = np.empty(dim)
    ynew = np.empty(dim)
    coef = np.empty((5, dim))
    yhit = np.empty(dim)

    cap = 64 if record else 1
    rec_t = np.empty(cap)
    rec_h = np.empty(cap)
    rec_c = np.empty((cap, 5, dim))
    n_rec = 0

    _rhs(y, k1, sigma, r, b, sgn)
    t = 0.0
    n_steps = 0
    n_grazing = 0
    if t_end <= 0.0:
        return ST_END, 0.0, y, 0, 0, rec_t[:0], rec_h[:0], rec_c[:0]

    # initial step (Hairer & Wanner heuristic)
    d0 = 0.0
    d1 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = np.sqrt(d0 / dim)
    d1 = np.sqrt(d1 / dim)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, hmax)
    for i in range(dim):
        ytmp[i] = y[i] + h * k1[i]
    _rhs(ytmp, k2, sigma, r, b, sgn)
    d2 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = np.sqrt(d2 / dim) / h
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h, h1, hmax, t_end)

    reject_prev = False
    while True:
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        elif h < 1e-14 * max(1.0, t):
            return ST_STEPFAIL, t, y, n_steps, n_grazing, rec_t[:n_rec], rec_h[:n_rec], rec_c[:n_rec]
        for i in range(dim):
            ytmp[i] = y[i] + h * A21 * k1[i]
        _rhs(ytmp, k2, sigma, r, b, sgn)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(ytmp, k3, sigma, r, b, sgn)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(ytmp, k4, sigma, r, b, sgn)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(ytmp, k5, sigma, r, b, sgn)
        for i in range(dim):
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                                  + A65 * k5[i])
        _rhs(ytmp, k6, sigma, r, b, sgn)
        for i in range(dim):
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i]
                                  + A76 * k6[i])
        _rhs(ynew, k7, sigma, r, b, sgn)
        err = 0.0
        for i in range(dim):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                     + E7 * k7[i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = np.sqrt(err / dim)
        if not np.isfinite(err):
            h *= 0.1
            reject_prev = True
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            reject_prev = True
            continue

        n_steps += 1
        for i in range(dim):
            ydiff = ynew[i] - y[i]
            bspl = h * k1[i] - ydiff
            coef[0, i] = y[i]
            coef[1, i] = ydiff
            coef[2, i] = bspl
            coef[3, i] = ydiff - h * k7[i] - bspl
            coef[4, i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                              + D6 * k6[i] + D7 * k7[i])

        hit = False
        theta_hit = 0.0
        if event:
            q0 = sgn * (y[2] - plane)
            q1 = sgn * (ynew[2] - plane)
            if q0 > 0.0 and q1 <= 0.0:
                # safeguarded secant (Illinois) on the dense output
                a = 0.0
                bb = 1.0
                qa = q0
                qb = q1
                side = 0
                th = 1.0
                for _ in range(200):
                    if qb == 0.0:
                        th = bb
                        break
                    th = (a * qb - bb * qa) / (qb - qa)
                    if not (a < th < bb):
                        th = 0.5 * (a + bb)
                    qt = sgn * (_dense_x3(coef, th) - plane)
                    if qt > 0.0:
                        a = th
                        qa = qt
                        if side == 1:
                            qb *= 0.5
                        side = 1
                    else:
                        bb = th
                        qb = qt
                        if side == -1:
                            qa *= 0.5
                        side = -1
                    if (bb - a) * h < 1e-15 or qt == 0.0:
                        break
                th = bb if qb == 0.0 else th
                _dense(coef, th, yhit)
                x3dot = yhit[0] * yhit[1] - b * yhit[2]
                if abs(x3dot) < 1e-8:
                    n_grazing += 1
                elif _inside(yhit[0], yhit[1], center, rect_inv):
                    hit = True
                    theta_hit = th

        if record:
            if n_rec >= cap:
                ncap = 2 * cap
                t2 = np.empty(ncap)
                h2 = np.empty(ncap)
                c2 = np.empty((ncap, 5, dim))
                t2[:n_rec] = rec_t[:n_rec]
                h2[:n_rec] = rec_h[:n_rec]
                c2[:n_rec] = rec_c[:n_rec]
                rec_t = t2
                rec_h = h2
                rec_c = c2
                cap = ncap
            rec_t[n_rec] = t
            rec_h[n_rec] = h
            rec_c[n_rec] = coef
            n_rec += 1

        if hit:
            return ST_HIT, t + theta_hit * h, yhit, n_steps, n_grazing, rec_t[:n_rec], rec_h[:n_rec], rec_c[:n_rec]

        t = t_end if last else t + h
        for i in range(dim):
            y[i] = ynew[i]
            k1[i] = k7[i]
        if y[0] * y[0] + y[1] * y[1] + y[2] * y[2] > trap_radius * trap_radius:
            return ST_ESCAPE, t, y, n_steps, n_grazing, rec_t[:n_rec], rec_h[:n_rec], rec_c[:n_rec]
        if last:
            return ST_END, t, y, n_steps, n_grazing, rec_t[:n_rec], rec_h[:n_rec], rec_c[:n_rec]
        fac = 0.9 * err ** -0.2 if err > 0 else 10.0
        fac = min(10.0, max(0.2, fac))
        if reject_prev:
            fac = min(fac, 1.0)
        reject_prev = False
        h = min(h * fac, hmax)


@njit(cache=True)
def dense_eval(rec_t, rec_h, rec_c, tq, out):
    """Evaluate recorded dense output at sorted elapsed times ``tq``."""
    m = rec_c.shape[0]
    j = 0
    buf = np.empty(rec_c.shape[2])
    for q in range(tq.shape[0]):
        tt = tq[q]
        while j < m - 1 and tt > rec_t[j] + rec_h[j]:
            j += 1
        theta = (tt - rec_t[j]) / rec_h[j]
        _dense(rec_c[j], theta, buf)
        for i in range(out.shape[1]):
            out[q, i] = buf[i]
