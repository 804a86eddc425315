"""Numba kernel: high-order Taylor integration of the Lorenz field in
double-double arithmetic.

A double-double number is an unevaluated sum ``hi + lo`` with
``|lo| <= ulp(hi) / 2`` giving roughly 32 significant digits.  Taylor
coefficients of the solution are generated by the usual recursion for the
quadratic Lorenz nonlinearity, step sizes follow the Jorba-Zou rule, and the
series itself serves as dense output for locating section crossings.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ST_END = 0
ST_HIT = 1
ST_ESCAPE = 2
ST_STEPFAIL = 3

_SPLIT = 134217729.0  # 2**27 + 1


@njit(cache=True, inline="always")
def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


@njit(cache=True, inline="always")
def _split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


@njit(cache=True, inline="always")
def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def dd_add(ah, al, bh, bl):
    s, e = two_sum(ah, bh)
    t, f = two_sum(al, bl)
    e += t
    s, e = quick_two_sum(s, e)
    e += f
    return quick_two_sum(s, e)


@njit(cache=True, inline="always")
def dd_mul(ah, al, bh, bl):
    p, e = two_prod(ah, bh)
    e += ah * bl + al * bh
    return quick_two_sum(p, e)


@njit(cache=True, inline="always")
def dd_mul_d(ah, al, b):
    p, e = two_prod(ah, b)
    e += al * b
    return quick_two_sum(p, e)


@njit(cache=True, inline="always")
def dd_div(ah, al, bh, bl):
    q1 = ah / bh
    ph, pl = dd_mul_d(bh, bl, q1)
    rh, rl = dd_add(ah, al, -ph, -pl)
    q2 = rh / bh
    ph, pl = dd_mul_d(bh, bl, q2)
    rh, rl = dd_add(rh, rl, -ph, -pl)
    q3 = rh / bh
    q1, q2 = quick_two_sum(q1, q2)
    return dd_add(q1, q2, q3, 0.0)


@njit(cache=True)
def _inverses(n):
    ih = np.empty(n + 1)
    il = np.empty(n + 1)
    ih[0] = 0.0
    il[0] = 0.0
    for k in range(1, n + 1):
        ih[k], il[k] = dd_div(1.0, 0.0, float(k), 0.0)
    return ih, il


@njit(cache=True)
def _coefficients(xh, xl, ch, cl, order, sigma, r, b, ih, il, sgn):
    """Fill Taylor coefficients ``c[k, i]`` of the solution through ``x``."""
    for i in range(3):
        ch[0, i] = xh[i]
        cl[0, i] = xl[i]
    for k in range(order):
        # Cauchy products x*z and x*y at order k
        pzh = 0.0
        pzl = 0.0
        pyh = 0.0
        pyl = 0.0
        for j in range(k + 1):
            th, tl = dd_mul(ch[j, 0], cl[j, 0], ch[k - j, 2], cl[k - j, 2])
            pzh, pzl = dd_add(pzh, pzl, th, tl)
            th, tl = dd_mul(ch[j, 0], cl[j, 0], ch[k - j, 1], cl[k - j, 1])
            pyh, pyl = dd_add(pyh, pyl, th, tl)
        # x' = sigma (y - x)
        dh, dl = dd_add(ch[k, 1], cl[k, 1], -ch[k, 0], -cl[k, 0])
        dh, dl = dd_mul_d(dh, dl, sgn * sigma)
        ch[k + 1, 0], cl[k + 1, 0] = dd_mul(dh, dl, ih[k + 1], il[k + 1])
        # y' = r x - y - x z
        ah, al = dd_mul_d(ch[k, 0], cl[k, 0], r)
        ah, al = dd_add(ah, al, -ch[k, 1], -cl[k, 1])
        ah, al = dd_add(ah, al, -pzh, -pzl)
        ah, al = dd_mul_d(ah, al, sgn)
        ch[k + 1, 1], cl[k + 1, 1] = dd_mul(ah, al, ih[k + 1], il[k + 1])
        # z' = x y - b z
        ah, al = dd_mul_d(ch[k, 2], cl[k, 2], -b)
        ah, al = dd_add(ah, al, pyh, pyl)
        ah, al = dd_mul_d(ah, al, sgn)
        ch[k + 1, 2], cl[k + 1, 2] = dd_mul(ah, al, ih[k + 1], il[k + 1])


@njit(cache=True)
def _horner(ch, cl, order, i, th, tl):
    vh = ch[order, i]
    vl = cl[order, i]
    for k in range(order - 1, -1, -1):
        vh, vl = dd_mul(vh, vl, th, tl)
        vh, vl = dd_add(vh, vl, ch[k, i], cl[k, i])
    return vh, vl


@njit(cache=True)
def _horner_deriv(ch, cl, order, i, th, tl):
    vh = ch[order, i] * order
    vl = cl[order, i] * order
    for k in range(order - 1, 0, -1):
        vh, vl = dd_mul(vh, vl, th, tl)
        ah, al = dd_mul_d(ch[k, i], cl[k, i], float(k))
        vh, vl = dd_add(vh, vl, ah, al)
    return vh, vl


@njit(cache=True)
def _inside(x1, x2, center, rect_inv):
    w0 = x1 - center[0]
    w1 = x2 - center[1]
    u = rect_inv[0, 0] * w0 + rect_inv[0, 1] * w1
    v = rect_inv[1, 0] * w0 + rect_inv[1, 1] * w1
    return abs(u) <= 1.0 and abs(v) <= 1.0


@njit(cache=True)
def taylor_run(xh0, xl0, t_end, t_end_lo, direction, sigma, r, b, plane, event, center, rect_inv,
               tol, order, hmax, trap_radius):
    """Integrate from ``xh0 + xl0`` for elapsed time up to ``t_end + t_end_lo``.

    Elapsed time is returned as a double-double pair.  ``direction = -1``
    integrates the reversed field.  Event semantics match the DOPRI kernel.

    Returns
    -------
    status, t_hi, t_lo, x_hi, x_lo, n_steps, n_grazing
    """
    sgn = float(direction)
    xh = xh0.copy()
    xl = xl0.copy()
    ch = np.zeros((order + 1, 3))
    cl = np.zeros((order + 1, 3))
    ih, il = _inverses(order)
    nh = np.empty(3)
    nl = np.empty(3)
    th_ = 0.0
    tl_ = 0.0
    n_steps = 0
    n_grazing = 0
    if t_end <= 0.0:
        return ST_END, 0.0, 0.0, xh, xl, 0, 0
    while True:
        _coefficients(xh, xl, ch, cl, order, sigma, r, b, ih, il, sgn)
        scale = max(1.0, max(abs(xh[0]), max(abs(xh[1]), abs(xh[2]))))
        eps = tol * scale
        n1 = max(abs(ch[order - 1, 0]), max(abs(ch[order - 1, 1]), abs(ch[order - 1, 2])))
        n2 = max(abs(ch[order, 0]), max(abs(ch[order, 1]), abs(ch[order, 2])))
        h = hmax
        if n1 > 0:
            h = min(h, (eps / n1) ** (1.0 / (order - 1)))
        if n2 > 0:
            h = min(h, (eps / n2) ** (1.0 / order))
        h *= np.exp(-0.7 / (order - 1))
        if h < 1e-14 * max(1.0, th_):
            return ST_STEPFAIL, th_, tl_, xh, xl, n_steps, n_grazing
        # remaining time in double-double
        rh, rl = dd_add(t_end, t_end_lo, -th_, -tl_)
        last = False
        sh = h
        sl = 0.0
        if rh <= h:
            sh = rh
            sl = rl
            last = True
        for i in range(3):
            nh[i], nl[i] = _horner(ch, cl, order, i, sh, sl)
        n_steps += 1

        if event:
            q0 = sgn * (xh[2] - plane)
            q1 = sgn * (nh[2] - plane)
            if q0 > 0.0 and q1 <= 0.0:
                # bracket in double, then polish with double-double Newton
                a = 0.0
                bb = sh
                qa = q0
                qb = q1
                for _ in range(80):
                    m = (a * qb - bb * qa) / (qb - qa)
                    if not (a < m < bb) or (bb - a) < 1e-3 * sh:
                        m = 0.5 * (a + bb)
                    vh, vl = _horner(ch, cl, order, 2, m, 0.0)
                    qm = sgn * (vh - plane)
                    if qm > 0.0:
                        a = m
                        qa = qm
                    else:
                        bb = m
                        qb = qm
                    if bb - a < 1e-13 * max(sh, 1e-300):
                        break
                wh = 0.5 * (a + bb)
                wl = 0.0
                for _ in range(4):
                    vh, vl = _horner(ch, cl, order, 2, wh, wl)
                    vh, vl = dd_add(vh, vl, -plane, 0.0)
                    dh, dl = _horner_deriv(ch, cl, order, 2, wh, wl)
                    qh, ql = dd_div(vh, vl, dh, dl)
                    wh, wl = dd_add(wh, wl, -qh, -ql)
                hh = np.empty(3)
                hl = np.empty(3)
                for i in range(3):
                    hh[i], hl[i] = _horner(ch, cl, order, i, wh, wl)
                x3dot = hh[0] * hh[1] - b * hh[2]
                if abs(x3dot) < 1e-8:
                    n_grazing += 1
                elif _inside(hh[0], hh[1], center, rect_inv):
                    th2, tl2 = dd_add(th_, tl_, wh, wl)
                    return ST_HIT, th2, tl2, hh, hl, n_steps, n_grazing

        th_, tl_ = dd_add(th_, tl_, sh, sl)
        for i in range(3):
            xh[i] = nh[i]
            xl[i] = nl[i]
        if xh[0] * xh[0] + xh[1] * xh[1] + xh[2] * xh[2] > trap_radius * trap_radius:
            return ST_ESCAPE, th_, tl_, xh, xl, n_steps, n_grazing
        if last:
            return ST_END, th_, tl_, xh, xl, n_steps, n_grazing
