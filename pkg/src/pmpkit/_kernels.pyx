# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the integrator, dense output and chattering loops.

Semantics match ``pmpkit._kernels_py`` exactly; only the arithmetic around the
user callback is typed.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, isfinite, nextafter, INFINITY

cnp.import_array()

cdef double[7] C = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] A = [
    [0, 0, 0, 0, 0, 0],
    [1.0 / 5, 0, 0, 0, 0, 0],
    [3.0 / 40, 9.0 / 40, 0, 0, 0, 0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0],
    [35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] B = [35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0]
cdef double[7] E = [-71.0 / 57600, 0, 71.0 / 16695, -71.0 / 1920, 17253.0 / 339200,
                    -22.0 / 525, 1.0 / 40]
cdef double[7][4] P = [
    [1, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799],
    [0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072],
    [0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632],
    [0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844],
    [0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423],
]

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0

DONE, STOPPED, MAX_STEPS, NONFINITE, STEP_UNDERFLOW = 0, 1, 2, 3, 4


cdef inline double _rms(double[::1] v, Py_ssize_t n):
    cdef double acc = 0.0
    cdef Py_ssize_t i
    if n == 0:
        return 0.0
    for i in range(n):
        acc += v[i] * v[i]
    return sqrt(acc / n)


cdef cnp.ndarray _call(fun, double t, cnp.ndarray y):
    return np.array(fun(t, y), dtype=np.float64)


def _initial_step(fun, double t0, cnp.ndarray y0, cnp.ndarray f0, double direction,
                  double rtol, double atol):
    cdef Py_ssize_t n = y0.shape[0], i
    cdef double[::1] yv = y0
    cdef double[::1] fv = f0
    cdef double[::1] tmp = np.empty(n)
    cdef double sc, d0, d1, d2, h0, h1
    for i in range(n):
        tmp[i] = yv[i] / (atol + fabs(yv[i]) * rtol)
    d0 = _rms(tmp, n)
    for i in range(n):
        tmp[i] = fv[i] / (atol + fabs(yv[i]) * rtol)
    d1 = _rms(tmp, n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    cdef double[::1] f1 = _call(fun, t0 + h0 * direction, y1)
    for i in range(n):
        tmp[i] = (f1[i] - fv[i]) / (atol + fabs(yv[i]) * rtol)
    d2 = _rms(tmp, n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = pow(0.01 / max(d1, d2), 0.2)
    return min(100 * h0, h1)


def dopri5(fun, double t0, double t1, y0, double rtol, double atol, h0,
           Py_ssize_t max_steps, stop):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` (either direction).

    Returns ``(ts, ys, ks, h_next, status)``; see the pure-Python twin.
    """
    cdef cnp.ndarray y = np.array(y0, dtype=np.float64).ravel()
    cdef Py_ssize_t n = y.shape[0]
    cdef double span = t1 - t0
    if span == 0.0:
        return np.array([t0]), y[None, :].copy(), np.zeros((0, 7, n)), h0, DONE
    cdef double direction = 1.0 if span > 0 else -1.0
    cdef double t = t0
    cdef cnp.ndarray f = _call(fun, t, y)
    if not np.all(np.isfinite(f)):
        return np.array([t0]), y[None, :].copy(), np.zeros((0, 7, n)), h0, NONFINITE
    cdef double h
    if h0 is not None and h0 > 0:
        h = fabs(h0)
    else:
        h = _initial_step(fun, t, y, f, direction, rtol, atol)

    cdef cnp.ndarray Karr = np.empty((7, n))
    cdef double[:, ::1] K = Karr
    cdef cnp.ndarray ystage = np.empty(n)
    cdef double[::1] ysv = ystage
    cdef cnp.ndarray ynew = np.empty(n)
    cdef double[::1] ynv = ynew
    cdef double[::1] yv = y
    cdef double[::1] errv = np.empty(n)
    cdef double[::1] kv
    cdef list ts = [t], ys = [y.copy()], ks = []
    cdef int status = DONE
    cdef Py_ssize_t steps = 0, s, j, i
    cdef bint rejected = False, last
    cdef double remaining, hs, sh, t_new, err, factor, acc, sc, min_step

    kv = f
    for i in range(n):
        K[0, i] = kv[i]
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        min_step = 10 * fabs(nextafter(t, direction * INFINITY) - t)
        if h < min_step:
            status = STEP_UNDERFLOW
            break
        remaining = fabs(t1 - t)
        last = h >= remaining
        hs = remaining if last else h
        sh = hs * direction
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += A[s][j] * K[j, i]
                ysv[i] = yv[i] + sh * acc
            kv = _call(fun, t + C[s] * sh, ystage)
            for i in range(n):
                K[s, i] = kv[i]
        for i in range(n):
            acc = 0.0
            for j in range(6):
                acc += B[j] * K[j, i]
            ynv[i] = yv[i] + sh * acc
        t_new = t1 if last else t + sh
        f_new = _call(fun, t_new, ynew)
        kv = f_new
        for i in range(n):
            K[6, i] = kv[i]
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += E[j] * K[j, i]
            sc = atol + max(fabs(yv[i]), fabs(ynv[i])) * rtol
            errv[i] = sh * acc / sc
        err = _rms(errv, n)
        if not isfinite(err):
            h = hs * MIN_FACTOR
            rejected = True
            steps += 1
            if h < min_step:
                status = NONFINITE
                break
            continue
        if err <= 1.0:
            if err == 0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * pow(err, -0.2))
            if rejected:
                factor = min(1.0, factor)
            rejected = False
            t = t_new
            y = ynew.copy()
            yv = y
            f = f_new
            ts.append(t)
            ys.append(y.copy())
            ks.append(Karr.copy())
            steps += 1
            h = max(h, hs * factor) if last else hs * factor
            for i in range(n):
                K[0, i] = K[6, i]
            if stop is not None and stop(t, y):
                status = STOPPED
                break
        else:
            h = hs * max(MIN_FACTOR, SAFETY * pow(err, -0.2))
            rejected = True
            steps += 1
    ks_arr = np.array(ks) if ks else np.zeros((0, 7, n))
    return np.array(ts), np.array(ys), ks_arr, h, status


def dense_eval(ts_in, ys_in, ks_in, tq_in):
    """Evaluate the continuous extension at query times ``tq``."""
    cdef const double[::1] ts = np.ascontiguousarray(ts_in, dtype=np.float64)
    cdef const double[:, ::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef const double[:, :, ::1] ks = np.ascontiguousarray(ks_in, dtype=np.float64)
    cdef const double[::1] tq = np.ascontiguousarray(np.atleast_1d(tq_in), dtype=np.float64)
    cdef Py_ssize_t m = ts.shape[0] - 1, n = ys.shape[1], nq = tq.shape[0]
    cdef Py_ssize_t q, j, lo, hi, mid, i, st, p
    cdef cnp.ndarray out_arr = np.empty((nq, n))
    cdef double[:, ::1] out = out_arr
    cdef double tv, h, s, acc, pw
    cdef double[4] powers
    cdef bint increasing
    if m == 0:
        for q in range(nq):
            for i in range(n):
                out[q, i] = ys[0, i]
        return out_arr
    increasing = ts[m] > ts[0]
    for q in range(nq):
        tv = tq[q]
        # bisection for the interval holding tv
        lo = 0
        hi = m
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if (ts[mid] <= tv) == increasing:
                lo = mid
            else:
                hi = mid
        j = lo
        h = ts[j + 1] - ts[j]
        s = (tv - ts[j]) / h
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        powers[0] = s
        powers[1] = s * s
        powers[2] = s * s * s
        powers[3] = s * s * s * s
        for i in range(n):
            acc = 0.0
            for st in range(7):
                pw = 0.0
                for p in range(4):
                    pw += P[st][p] * powers[p]
                acc += ks[j, st, i] * pw
            out[q, i] = ys[j, i] + h * acc
    return out_arr


def chatter_sup(tt_in, hh_in, inside_in, double weight, bint relative):
    """Running sup-norm error between a block integral and its share."""
    cdef const double[::1] tt = np.ascontiguousarray(tt_in, dtype=np.float64)
    cdef const double[:, ::1] hh = np.ascontiguousarray(hh_in, dtype=np.float64)
    cdef const unsigned char[::1] inside = np.ascontiguousarray(inside_in, dtype=np.uint8)
    cdef Py_ssize_t npts = tt.shape[0], d = hh.shape[1], k, i
    cdef double[::1] block = np.zeros(d)
    cdef double[::1] full = np.zeros(d)
    cdef double best = 0.0, piece, diff, acc, half
    for k in range(npts - 1):
        half = 0.5 * (tt[k + 1] - tt[k])
        acc = 0.0
        for i in range(d):
            piece = half * (hh[k, i] + hh[k + 1, i])
            full[i] += piece
            if inside[k]:
                block[i] += piece
            if relative:
                diff = block[i] / weight - full[i]
            else:
                diff = block[i] - weight * full[i]
            acc += diff * diff
        acc = sqrt(acc)
        if acc > best:
            best = acc
    return best
