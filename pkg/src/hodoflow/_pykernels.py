"""Pure-Python geodesic kernels (fallback for the compiled ``_ckernels``).

Same call signatures and status codes as the Cython module:

    0 = reached t_end, 1 = left the open chart, 2 = step underflow,
    3 = step budget exhausted.

State vectors are ``[x_1..x_n, u_1..u_n]``.  Chart codes: 0 cylinder,
1 cone (param = alpha), 2 sphere2, 3 sphere3.
"""
import math

import numpy as np

BACKEND = "python"

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0


def _dim(chart):
    return 3 if chart == 3 else 2


def rhs(chart, param, y):
    """Geodesic vector field ``dy/dt`` for a single state (list or array)."""
    n = _dim(chart)
    out = [0.0] * (2 * n)
    for i in range(n):
        out[i] = y[n + i]
    if chart == 1:
        r, u, v = y[0], y[2], y[3]
        out[2] = param * r * v * v
        out[3] = -2.0 * u * v / r
    elif chart == 2:
        s, c = math.sin(y[0]), math.cos(y[0])
        u, v = y[2], y[3]
        out[2] = s * c * v * v
        out[3] = -2.0 * (c / s) * u * v
    elif chart == 3:
        s1, c1 = math.sin(y[0]), math.cos(y[0])
        s2, c2 = math.sin(y[1]), math.cos(y[1])
        u1, u2, u3 = y[3], y[4], y[5]
        cot1 = c1 / s1
        cot2 = c2 / s2
        out[3] = s1 * c1 * u2 * u2 + s1 * c1 * s2 * s2 * u3 * u3
        out[4] = -2.0 * cot1 * u1 * u2 + s2 * c2 * u3 * u3
        out[5] = -2.0 * cot1 * u1 * u3 - 2.0 * cot2 * u2 * u3
    return out


def interior(chart, y):
    for v in y:
        if not math.isfinite(v):
            return False
    if chart == 1:
        return y[0] > 0.0
    if chart == 2:
        return 0.0 < y[0] < math.pi
    if chart == 3:
        return 0.0 < y[0] < math.pi and 0.0 < y[1] < math.pi
    return True


def _err_norm(y, ynew, err, rtol, atol):
    e = 0.0
    for a, b, d in zip(y, ynew, err):
        sc = atol + rtol * max(abs(a), abs(b))
        q = abs(d) / sc
        if q > e:
            e = q
    return e


def integrate(chart, param, y0, t0, t_end, rtol, atol, h0, max_steps, hmin):
    """Adaptive DP5(4) integration, recording every accepted step.

    Returns ``(ts, ys, n_accepted, n_rejected, status)`` with ``ts`` of shape
    ``(m,)`` and ``ys`` of shape ``(m, 2n)``.
    """
    y = [float(v) for v in y0]
    m = len(y)
    t = float(t0)
    direction = 1.0 if t_end >= t0 else -1.0
    h = abs(h0)
    ts = [t]
    ys = [list(y)]
    n_acc = n_rej = 0
    status = 0
    if not interior(chart, y):
        return np.array(ts), np.array(ys), 0, 0, 1
    k1 = rhs(chart, param, y)
    steps = 0
    while direction * (t_end - t) > 0.0:
        if steps >= max_steps:
            status = 3
            break
        steps += 1
        if h < hmin:
            status = 2
            break
        last = False
        if h >= abs(t_end - t):
            h = abs(t_end - t)
            last = True
        hs = direction * h
        K = [k1]
        for s in range(1, 7):
            a = _A[s]
            ys_ = [y[i] + hs * sum(a[j] * K[j][i] for j in range(s)) for i in range(m)]
            K.append(rhs(chart, param, ys_))
        ynew = ys_  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = [hs * sum(_E[j] * K[j][i] for j in range(7)) for i in range(m)]
        finite = all(math.isfinite(v) for v in err) and all(math.isfinite(v) for v in K[6])
        en = _err_norm(y, ynew, err, rtol, atol) if finite else math.inf
        if en <= 1.0:
            if not interior(chart, ynew):
                status = 1
                break
            t = t_end if last else t + hs
            y = ynew
            k1 = K[6]
            ts.append(t)
            ys.append(list(y))
            n_acc += 1
            fac = _FAC_MAX if en == 0.0 else min(_FAC_MAX, max(_FAC_MIN, _SAFETY * en ** -0.2))
            h = h * fac
        else:
            n_rej += 1
            fac = _FAC_MIN if not math.isfinite(en) else min(1.0, max(_FAC_MIN, _SAFETY * en ** -0.2))
            h = h * fac
    return np.array(ts), np.array(ys), n_acc, n_rej, status


def _rhs_batch(chart, param, Y):
    n = Y.shape[1] // 2
    out = np.empty_like(Y)
    out[:, :n] = Y[:, n:]
    if chart == 0:
        out[:, n:] = 0.0
    elif chart == 1:
        r, u, v = Y[:, 0], Y[:, 2], Y[:, 3]
        out[:, 2] = param * r * v * v
        out[:, 3] = -2.0 * u * v / r
    elif chart == 2:
        s, c = np.sin(Y[:, 0]), np.cos(Y[:, 0])
        u, v = Y[:, 2], Y[:, 3]
        out[:, 2] = s * c * v * v
        out[:, 3] = -2.0 * (c / s) * u * v
    else:
        s1, c1 = np.sin(Y[:, 0]), np.cos(Y[:, 0])
        s2, c2 = np.sin(Y[:, 1]), np.cos(Y[:, 1])
        u1, u2, u3 = Y[:, 3], Y[:, 4], Y[:, 5]
        cot1, cot2 = c1 / s1, c2 / s2
        out[:, 3] = s1 * c1 * u2 * u2 + s1 * c1 * s2 * s2 * u3 * u3
        out[:, 4] = -2.0 * cot1 * u1 * u2 + s2 * c2 * u3 * u3
        out[:, 5] = -2.0 * cot1 * u1 * u3 - 2.0 * cot2 * u2 * u3
    return out


def _interior_batch(chart, Y):
    ok = np.all(np.isfinite(Y), axis=1)
    if chart == 1:
        ok &= Y[:, 0] > 0.0
    elif chart == 2:
        ok &= (Y[:, 0] > 0.0) & (Y[:, 0] < math.pi)
    elif chart == 3:
        ok &= (Y[:, 0] > 0.0) & (Y[:, 0] < math.pi) & (Y[:, 1] > 0.0) & (Y[:, 1] < math.pi)
    return ok


def integrate_batch(chart, param, Y0, t0, t_end, rtol, atol, h0, max_steps, hmin):
    """Integrate many initial states to ``t_end``; endpoints only.

    Vectorised over the batch with one shared step size, controlled by the
    worst trajectory.  Trajectories that leave the chart are frozen and
    reported with status 1.  Returns ``(Y_end, status)``.
    """
    Y = np.array(Y0, dtype=float, copy=True)
    nb = Y.shape[0]
    status = np.zeros(nb, dtype=np.int64)
    bad = ~_interior_batch(chart, Y)
    status[bad] = 1
    active = np.flatnonzero(~bad)
    t = float(t0)
    direction = 1.0 if t_end >= t0 else -1.0
    h = abs(h0)
    steps = 0
    E = np.array(_E)
    while direction * (t_end - t) > 0.0 and active.size:
        if steps >= max_steps:
            status[active] = 3
            break
        steps += 1
        if h < hmin:
            status[active] = 2
            break
        last = False
        if h >= abs(t_end - t):
            h = abs(t_end - t)
            last = True
        hs = direction * h
        y = Y[active]
        K = [_rhs_batch(chart, param, y)]
        for s in range(1, 7):
            a = _A[s]
            ys_ = y + hs * sum(a[j] * K[j] for j in range(s))
            K.append(_rhs_batch(chart, param, ys_))
        ynew = ys_
        err = hs * sum(E[j] * K[j] for j in range(7))
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        with np.errstate(invalid="ignore"):
            q = np.max(np.abs(err) / sc, axis=1)
        q[~np.isfinite(q)] = np.inf
        en = float(np.max(q))
        if en <= 1.0:
            # an accurate step that lands outside is a genuine exit
            out = ~_interior_batch(chart, ynew)
            if np.any(out):
                status[active[out]] = 1
            Y[active[~out]] = ynew[~out]
            active = active[~out]
            t = t_end if last else t + hs
            fac = _FAC_MAX if en == 0.0 else min(_FAC_MAX, max(_FAC_MIN, _SAFETY * en ** -0.2))
        else:
            fac = _FAC_MIN if not math.isfinite(en) else min(1.0, max(_FAC_MIN, _SAFETY * en ** -0.2))
        h *= fac
    return Y, status
