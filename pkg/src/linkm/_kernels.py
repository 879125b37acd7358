"""Compiled inner loops: curve-integrated singular kernels and polygon Gauss sums."""

import numpy as np
from numba import njit, prange

FOUR_PI = 4.0 * np.pi
TWO_PI = 2.0 * np.pi
GL_X, GL_W = np.polynomial.legendre.leggauss(16)

FLAG_FAR = 0
FLAG_NEAR = 1
FLAG_SINGULAR = 2
FLAG_DEPTH = 3

INITIAL_PANELS = 8
MAX_DEPTH = 20


@njit(cache=True, nogil=True)
def _trig_channel(c0, ck, sk, ch, K, t, val, d1, d2):
    val[ch] = c0[ch]
    d1[ch] = 0.0
    d2[ch] = 0.0
    c1 = np.cos(t)
    s1 = np.sin(t)
    c = c1
    s = s1
    for k in range(1, K + 1):
        a = ck[ch, k - 1]
        b = sk[ch, k - 1]
        val[ch] += a * c + b * s
        d1[ch] += k * (b * c - a * s)
        d2[ch] -= k * k * (a * c + b * s)
        cn = c * c1 - s * s1
        s = s * c1 + c * s1
        c = cn


@njit(cache=True, nogil=True)
def fourier_eval(c0, ck, sk, nch, t, val, d1, d2, kg, kp):
    """Value, first and second derivative of each channel at ``t``.

    The three geometry channels use ``kg`` modes, the scalar channel ``kp``.
    """
    for ch in range(3):
        val[ch] = c0[ch]
        d1[ch] = 0.0
        d2[ch] = 0.0
    c1 = np.cos(t)
    s1 = np.sin(t)
    c = c1
    s = s1
    for k in range(1, kg + 1):
        for ch in range(3):
            a = ck[ch, k - 1]
            b = sk[ch, k - 1]
            val[ch] += a * c + b * s
            d1[ch] += k * (b * c - a * s)
            d2[ch] -= k * k * (a * c + b * s)
        cn = c * c1 - s * s1
        s = s * c1 + c * s1
        c = cn
    if nch > 3:
        _trig_channel(c0, ck, sk, 3, kp, t, val, d1, d2)


@njit(cache=True, nogil=True, inline="always")
def _accumulate(x0, x1, x2, p0, p1, p2, t0, t1, t2, phi, wq, power, sigma, out, with_dens):
    r0 = x0 - p0
    r1 = x1 - p1
    r2 = x2 - p2
    rr = r0 * r0 + r1 * r1 + r2 * r2
    rn = np.sqrt(rr)
    if rr == 0.0:
        # on a node: leave it to the near rule, which flags the point singular
        return 0.0
    if power == 3.0:
        inv = wq / (FOUR_PI * rr * rn)
    else:
        inv = wq / (FOUR_PI * rn ** power)
    c0 = (t1 * r2 - t2 * r1) * inv
    c1 = (t2 * r0 - t0 * r2) * inv
    c2 = (t0 * r1 - t1 * r0) * inv
    out[0] += c0
    out[1] += c1
    out[2] += c2
    out[3] += phi * c0
    out[4] += phi * c1
    out[5] += phi * c2
    if with_dens:
        g = np.sqrt(2.0 / np.pi) / sigma * np.exp(-0.5 * rr / (sigma * sigma))
        out[6] += wq * g / (FOUR_PI * rr * TWO_PI)
    return rn


@njit(cache=True, nogil=True)
def _near_rule(x0, x1, x2, tstar, c0, ck, sk, kg, kp, vmax, power, sigma, with_dens, hard_floor, out):
    """Adaptive Gauss-Legendre panels, bisected toward the nearest curve point."""
    val = np.empty(4)
    d1 = np.empty(4)
    d2 = np.empty(4)
    t = tstar
    for _ in range(8):
        fourier_eval(c0, ck, sk, 3, t, val, d1, d2, kg, kp)
        e0 = val[0] - x0
        e1 = val[1] - x1
        e2 = val[2] - x2
        g = e0 * d1[0] + e1 * d1[1] + e2 * d1[2]
        gp = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2] + e0 * d2[0] + e1 * d2[1] + e2 * d2[2]
        if gp <= 0.0:
            break
        step = g / gp
        t -= step
        if abs(step) < 1e-15:
            break
    fourier_eval(c0, ck, sk, 3, t, val, d1, d2, kg, kp)
    dist = np.sqrt((val[0] - x0) ** 2 + (val[1] - x1) ** 2 + (val[2] - x2) ** 2)
    if dist < hard_floor:
        return FLAG_SINGULAR
    flag = FLAG_NEAR
    nch = 4 if (ck.shape[0] > 3 and kp > 0) else 3
    stack_a = np.empty(4 * MAX_DEPTH + 4 * INITIAL_PANELS)
    stack_b = np.empty(4 * MAX_DEPTH + 4 * INITIAL_PANELS)
    stack_d = np.empty(4 * MAX_DEPTH + 4 * INITIAL_PANELS, dtype=np.int64)
    top = 0
    width = TWO_PI / INITIAL_PANELS
    lo = t - np.pi
    for j in range(INITIAL_PANELS):
        stack_a[top] = lo + j * width
        stack_b[top] = lo + (j + 1) * width
        stack_d[top] = 0
        top += 1
    while top > 0:
        top -= 1
        a = stack_a[top]
        b = stack_b[top]
        depth = stack_d[top]
        m = 0.5 * (a + b)
        hw = 0.5 * (b - a)
        fourier_eval(c0, ck, sk, 3, m, val, d1, d2, kg, kp)
        dm = np.sqrt((val[0] - x0) ** 2 + (val[1] - x1) ** 2 + (val[2] - x2) ** 2)
        if dm < 2.0 * vmax * hw:
            if depth < MAX_DEPTH:
                stack_a[top] = a
                stack_b[top] = m
                stack_d[top] = depth + 1
                top += 1
                stack_a[top] = m
                stack_b[top] = b
                stack_d[top] = depth + 1
                top += 1
                continue
            flag = FLAG_DEPTH
        for q in range(GL_X.shape[0]):
            tq = m + hw * GL_X[q]
            fourier_eval(c0, ck, sk, nch, tq, val, d1, d2, kg, kp)
            phi = val[3] if nch == 4 else 0.0
            _accumulate(x0, x1, x2, val[0], val[1], val[2], d1[0], d1[1], d1[2], phi,
                        hw * GL_W[q], power, sigma, out, with_dens)
    return flag


@njit(cache=True, nogil=True)
def _one_point(x0, x1, x2, c0, ck, sk, kg, kp, nodes_p, nodes_t, nodes_w, tnodes, vmax, near_dist,
               power, sigma, with_dens, hard_floor, out):
    n = nodes_p.shape[0]
    wq = TWO_PI / n
    for q in range(7):
        out[q] = 0.0
    dmin = 1e300
    imin = 0
    for m in range(n):
        rn = _accumulate(x0, x1, x2, nodes_p[m, 0], nodes_p[m, 1], nodes_p[m, 2],
                         nodes_t[m, 0], nodes_t[m, 1], nodes_t[m, 2], nodes_w[m], wq,
                         power, sigma, out, with_dens)
        if rn < dmin:
            dmin = rn
            imin = m
    if dmin >= near_dist:
        return FLAG_FAR
    for q in range(7):
        out[q] = 0.0
    flag = _near_rule(x0, x1, x2, tnodes[imin], c0, ck, sk, kg, kp, vmax, power, sigma, with_dens,
                      hard_floor, out)
    if flag == FLAG_SINGULAR:
        for q in range(7):
            out[q] = 0.0
    return flag


@njit(cache=True, parallel=True, nogil=True)
def curve_fields(X, C0, CK, SK, KG, KP, NP, NT, NW, TN, vmax, near_dist, active, power, sigma,
                 with_dens, hard_floor, A, AW, DENS, FLAGS):
    """Evaluate, for every point of ``X`` and every active curve ``j``:

    ``A[j]``     -- integral of the point kernel over curve j,
    ``AW[j]``    -- the same weighted by the curve's scalar channel,
    ``DENS[j]``  -- curve-averaged isotropic tube density with radial scale ``sigma``.
    """
    m = X.shape[0]
    ncurve = C0.shape[0]
    for i in prange(m):
        out = np.empty(7)
        for j in range(ncurve):
            if not active[j]:
                continue
            flag = _one_point(X[i, 0], X[i, 1], X[i, 2], C0[j], CK[j], SK[j], KG[j], KP[j], NP[j], NT[j], NW[j],
                              TN, vmax[j], near_dist[j], power, sigma, with_dens, hard_floor, out)
            FLAGS[j, i] = flag
            A[j, i, 0] = out[0]
            A[j, i, 1] = out[1]
            A[j, i, 2] = out[2]
            AW[j, i, 0] = out[3]
            AW[j, i, 1] = out[4]
            AW[j, i, 2] = out[5]
            DENS[j, i] = out[6]


@njit(cache=True, parallel=True, nogil=True)
def _polygon_gauss_rows(ls, ks):
    """Solid-angle contributions of each segment of ``ks`` against all of ``ls``."""
    nl = ls.shape[0]
    nk = ks.shape[0]
    partial = np.zeros(nk - 1)
    for i in prange(nk - 1):
        acc = 0.0
        for j in range(nl - 1):
            a = ls[j] - ks[i]
            b = ls[j] - ks[i + 1]
            c = ls[j + 1] - ks[i + 1]
            d = ls[j + 1] - ks[i]
            p = a[0] * (b[1] * c[2] - b[2] * c[1]) + a[1] * (b[2] * c[0] - b[0] * c[2]) \
                + a[2] * (b[0] * c[1] - b[1] * c[0])
            an = np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
            bn = np.sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2])
            cn = np.sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2])
            dn = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            bc = b[0] * c[0] + b[1] * c[1] + b[2] * c[2]
            ca = c[0] * a[0] + c[1] * a[1] + c[2] * a[2]
            ad = a[0] * d[0] + a[1] * d[1] + a[2] * d[2]
            dc = d[0] * c[0] + d[1] * c[1] + d[2] * c[2]
            d1 = an * bn * cn + ab * cn + bc * an + ca * bn
            d2 = an * dn * cn + ad * cn + dc * an + ca * dn
            acc += np.arctan2(p, d1) + np.arctan2(p, d2)
        partial[i] = acc
    return partial


@njit(cache=True, parallel=True, nogil=True)
def _gauss_double_rows(Pi, Ti, Pj, Tj):
    """Row ``a`` partials of :func:`gauss_double_sum`."""
    n = Pi.shape[0]
    partial = np.zeros(n)
    for a in prange(n):
        acc = 0.0
        for b in range(Pj.shape[0]):
            r0 = Pi[a, 0] - Pj[b, 0]
            r1 = Pi[a, 1] - Pj[b, 1]
            r2 = Pi[a, 2] - Pj[b, 2]
            c0 = Tj[b, 1] * r2 - Tj[b, 2] * r1
            c1 = Tj[b, 2] * r0 - Tj[b, 0] * r2
            c2 = Tj[b, 0] * r1 - Tj[b, 1] * r0
            rr = r0 * r0 + r1 * r1 + r2 * r2
            acc += (Ti[a, 0] * c0 + Ti[a, 1] * c1 + Ti[a, 2] * c2) / (rr * np.sqrt(rr))
        partial[a] = acc
    return partial


@njit(cache=True, nogil=True)
def projected_crossings(P, Q, tol):
    """Signed crossings between closed polygons ``P`` and ``Q`` already expressed in
    a frame whose third axis is the viewing direction.

    Returns ``(signed_sum, degenerate)``; a crossing closer than ``tol`` (in
    segment parameter) to a vertex, or between near-parallel segments, marks
    the projection degenerate.
    """
    n = P.shape[0]
    m = Q.shape[0]
    total = 0
    degenerate = False
    for a in range(n):
        a2 = (a + 1) % n
        px0 = P[a, 0]
        py0 = P[a, 1]
        dx = P[a2, 0] - px0
        dy = P[a2, 1] - py0
        xmin = min(px0, P[a2, 0])
        xmax = max(px0, P[a2, 0])
        ymin = min(py0, P[a2, 1])
        ymax = max(py0, P[a2, 1])
        for b in range(m):
            b2 = (b + 1) % m
            qx0 = Q[b, 0]
            qy0 = Q[b, 1]
            if max(qx0, Q[b2, 0]) < xmin or min(qx0, Q[b2, 0]) > xmax:
                continue
            if max(qy0, Q[b2, 1]) < ymin or min(qy0, Q[b2, 1]) > ymax:
                continue
            ex = Q[b2, 0] - qx0
            ey = Q[b2, 1] - qy0
            den = dx * ey - dy * ex
            wx = qx0 - px0
            wy = qy0 - py0
            scale = np.sqrt((dx * dx + dy * dy) * (ex * ex + ey * ey))
            if abs(den) <= 1e-12 * scale:
                if abs(wx * dy - wy * dx) <= 1e-12 * scale + 1e-300:
                    degenerate = True
                continue
            s = (wx * ey - wy * ex) / den
            u = (wx * dy - wy * dx) / den
            if s < -tol or s > 1 + tol or u < -tol or u > 1 + tol:
                continue
            if s < tol or s > 1 - tol or u < tol or u > 1 - tol:
                degenerate = True
                continue
            zp = P[a, 2] + s * (P[a2, 2] - P[a, 2])
            zq = Q[b, 2] + u * (Q[b2, 2] - Q[b, 2])
            if zp == zq:
                degenerate = True
                continue
            # crossing sign: (over x under) . view axis, then half counted per crossing
            cr = dx * ey - dy * ex
            if zp > zq:
                total += 1 if cr > 0 else -1
            else:
                total += -1 if cr > 0 else 1
    return total, degenerate


@njit(cache=True, parallel=True, nogil=True)
def self_gauss_apply(P, T, W):
    """``out[a, k] = sum_{b != a} <T_a, T_b, P_a - P_b> / |P_a - P_b|^3 * W[b, k]``.

    The self Gauss kernel of a smooth closed curve vanishes on the diagonal,
    so the diagonal node is dropped.
    """
    n = P.shape[0]
    nk = W.shape[1]
    out = np.zeros((n, nk))
    for a in prange(n):
        for b in range(n):
            if b == a:
                continue
            r0 = P[a, 0] - P[b, 0]
            r1 = P[a, 1] - P[b, 1]
            r2 = P[a, 2] - P[b, 2]
            c0 = T[b, 1] * r2 - T[b, 2] * r1
            c1 = T[b, 2] * r0 - T[b, 0] * r2
            c2 = T[b, 0] * r1 - T[b, 1] * r0
            rr = r0 * r0 + r1 * r1 + r2 * r2
            kab = (T[a, 0] * c0 + T[a, 1] * c1 + T[a, 2] * c2) / (rr * np.sqrt(rr))
            for k in range(nk):
                out[a, k] += kab * W[b, k]
    return out


@njit(cache=True, parallel=True, nogil=True)
def _pair_gauss_rows(X, AL, delta):
    """Row ``i`` partials of :func:`pair_gauss_sum`."""
    n = X.shape[0]
    k = AL.shape[0]
    inv_d2 = 1.0 / (delta * delta)
    part = np.zeros((n, k, k))
    for i in prange(n):
        for j in range(n):
            if j == i:
                continue
            r0 = X[i, 0] - X[j, 0]
            r1 = X[i, 1] - X[j, 1]
            r2 = X[i, 2] - X[j, 2]
            rr = r0 * r0 + r1 * r1 + r2 * r2
            w = -np.expm1(-rr * inv_d2) / (rr * np.sqrt(rr))
            for q in range(k):
                # c = AL[q, j] x r
                c0 = AL[q, j, 1] * r2 - AL[q, j, 2] * r1
                c1 = AL[q, j, 2] * r0 - AL[q, j, 0] * r2
                c2 = AL[q, j, 0] * r1 - AL[q, j, 1] * r0
                for p in range(k):
                    part[i, p, q] += w * (AL[p, i, 0] * c0 + AL[p, i, 1] * c1 + AL[p, i, 2] * c2)
    return part


# Row partials are summed serially in numpy: a sum inside a parallel kernel
# becomes a threaded reduction whose rounding depends on the worker count.

def polygon_gauss(ls, ks):
    """Exact Gauss linking sum of two closed polygons (last vertex repeats the first)."""
    return float(np.sum(_polygon_gauss_rows(ls, ks))) / TWO_PI


def gauss_double_sum(Pi, Ti, Pj, Tj):
    """Sum over node pairs of <Ti, Tj, Pi - Pj> / |Pi - Pj|^3 (no weights)."""
    return float(np.sum(_gauss_double_rows(Pi, Ti, Pj, Tj)))


def pair_gauss_sum(X, AL, delta):
    """``S[p, q] = sum_{i != j} <AL[p, i], AL[q, j], X_i - X_j> (1 - exp(-r^2/delta^2)) / r^3``.

    The factor ``1 - exp(-r^2/delta^2)`` removes the diagonal singularity so
    the all-pairs sum of independent points has finite variance.
    """
    return np.sum(_pair_gauss_rows(X, AL, delta), axis=0)
