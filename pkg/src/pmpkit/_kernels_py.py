"""Pure-Python reference versions of the hot loops.

The compiled module ``pmpkit._kernels`` exports the same three functions with
identical signatures and semantics; ``pmpkit.kernels`` picks one at import.
"""

import math

import numpy as np

# Dormand-Prince 5(4) tableau.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Continuous extension, y(t0 + s*h) = y0 + h * K.T @ P @ [s, s^2, s^3, s^4].
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

DONE, STOPPED, MAX_STEPS, NONFINITE, STEP_UNDERFLOW = 0, 1, 2, 3, 4


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / v.size) if v.size else 0.0


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = np.asarray(fun(t0 + h0 * direction, y1), dtype=float)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dopri5(fun, t0, t1, y0, rtol, atol, h0, max_steps, stop):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` (either direction).

    Returns ``(ts, ys, ks, h_next, status)``: accepted knots, states, the
    seven stage derivatives of every accepted step (for dense output), a
    suggested next step and a status code. ``stop(t, y)`` is polled after each
    accepted step; a truthy result ends the segment early with STOPPED.
    """
    y = np.array(y0, dtype=float)
    n = y.size
    span = t1 - t0
    if span == 0.0:
        return np.array([t0]), y[None, :].copy(), np.zeros((0, 7, n)), h0, DONE
    direction = 1.0 if span > 0 else -1.0
    t = t0
    f = np.asarray(fun(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        return np.array([t0]), y[None, :].copy(), np.zeros((0, 7, n)), h0, NONFINITE
    h = abs(h0) if h0 and h0 > 0 else _initial_step(fun, t, y, f, direction, rtol, atol)
    ts = [t]
    ys = [y.copy()]
    ks = []
    K = np.empty((7, n))
    status = DONE
    steps = 0
    rejected = False
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        min_step = 10 * abs(np.nextafter(t, direction * np.inf) - t)
        if h < min_step:
            status = STEP_UNDERFLOW
            break
        remaining = abs(t1 - t)
        last = h >= remaining
        hs = remaining if last else h
        sh = hs * direction
        K[0] = f
        for s in range(1, 6):
            dy = np.dot(A[s, :s], K[:s]) * sh
            K[s] = fun(t + C[s] * sh, y + dy)
        y_new = y + sh * np.dot(B[:6], K[:6])
        t_new = t1 if last else t + sh
        f_new = np.asarray(fun(t_new, y_new), dtype=float)
        K[6] = f_new
        scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        err = _rms(sh * np.dot(E, K) / scale)
        if not math.isfinite(err):
            h = hs * MIN_FACTOR
            rejected = True
            steps += 1
            if h < min_step:
                status = NONFINITE
                break
            continue
        if err <= 1.0:
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            if rejected:
                factor = min(1.0, factor)
            rejected = False
            t, y, f = t_new, y_new, f_new
            ts.append(t)
            ys.append(y.copy())
            ks.append(K.copy())
            steps += 1
            h = max(h, hs * factor) if last else hs * factor
            if stop is not None and stop(t, y):
                status = STOPPED
                break
        else:
            h = hs * max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected = True
            steps += 1
    ks_arr = np.array(ks) if ks else np.zeros((0, 7, n))
    return np.array(ts), np.array(ys), ks_arr, h, status


def dense_eval(ts, ys, ks, tq):
    """Evaluate the continuous extension at query times ``tq``.

    ``ts`` must be monotone (increasing or decreasing); queries are clipped to
    the covered span.
    """
    ts = np.asarray(ts, dtype=float)
    tq = np.atleast_1d(np.asarray(tq, dtype=float))
    m = ts.size - 1
    n = ys.shape[1]
    out = np.empty((tq.size, n))
    if m == 0:
        out[:] = ys[0]
        return out
    increasing = ts[-1] > ts[0]
    key = ts if increasing else ts[::-1]
    coeff = np.einsum("skn,kp->spn", ks, P)  # (m, 4, n)
    for q, tv in enumerate(tq):
        j = int(np.searchsorted(key, tv, side="right")) - 1
        j = min(max(j, 0), m - 1)
        if not increasing:
            j = m - 1 - j
        h = ts[j + 1] - ts[j]
        s = (tv - ts[j]) / h
        s = min(max(s, 0.0), 1.0)
        powers = np.array([s, s * s, s ** 3, s ** 4])
        out[q] = ys[j] + h * np.dot(powers, coeff[j])
    return out


def chatter_sup(tt, hh, inside, weight, relative):
    """Running sup-norm error between a block integral and its share.

    ``tt`` are sorted nodes, ``hh`` the integrand (rows) at those nodes
    (piecewise linear in between), ``inside[k]`` marks whether the
    sub-interval ``[tt[k], tt[k+1]]`` belongs to the block. Returns
    ``max_t |int_{[0,t] & block} h - weight * int_0^t h|``, divided by
    ``weight`` when ``relative`` is set.
    """
    d = hh.shape[1]
    block = np.zeros(d)
    full = np.zeros(d)
    best = 0.0
    for k in range(tt.size - 1):
        piece = 0.5 * (tt[k + 1] - tt[k]) * (hh[k] + hh[k + 1])
        full += piece
        if inside[k]:
            block += piece
        diff = block / weight - full if relative else block - weight * full
        val = math.sqrt(float(np.dot(diff, diff)))
        if val > best:
            best = val
    return best
