# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geodesic kernels.

Mirrors ``_pykernels`` call for call; see that module for the conventions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, pow, isfinite, M_PI

cnp.import_array()

BACKEND = "cython"

DEF MAXDIM = 6

cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200
cdef double E6 = 22.0 / 525, E7 = -1.0 / 40

cdef double SAFETY = 0.9, FAC_MIN = 0.2, FAC_MAX = 5.0


cdef inline int _dim(int chart) nogil:
    return 3 if chart == 3 else 2


cdef void _rhs(int chart, double p, const double* y, double* out) noexcept nogil:
    cdef int n = _dim(chart)
    cdef int i
    cdef double s, c, s1, c1, s2, c2, cot1, cot2
    for i in range(n):
        out[i] = y[n + i]
    if chart == 0:
        out[2] = 0.0
        out[3] = 0.0
    elif chart == 1:
        out[2] = p * y[0] * y[3] * y[3]
        out[3] = -2.0 * y[2] * y[3] / y[0]
    elif chart == 2:
        s = sin(y[0])
        c = cos(y[0])
        out[2] = s * c * y[3] * y[3]
        out[3] = -2.0 * (c / s) * y[2] * y[3]
    else:
        s1 = sin(y[0])
        c1 = cos(y[0])
        s2 = sin(y[1])
        c2 = cos(y[1])
        cot1 = c1 / s1
        cot2 = c2 / s2
        out[3] = s1 * c1 * y[4] * y[4] + s1 * c1 * s2 * s2 * y[5] * y[5]
        out[4] = -2.0 * cot1 * y[3] * y[4] + s2 * c2 * y[5] * y[5]
        out[5] = -2.0 * cot1 * y[3] * y[5] - 2.0 * cot2 * y[4] * y[5]


cdef bint _interior(int chart, const double* y) noexcept nogil:
    cdef int i
    for i in range(2 * _dim(chart)):
        if not isfinite(y[i]):
            return False
    if chart == 1:
        return y[0] > 0.0
    if chart == 2:
        return 0.0 < y[0] < M_PI
    if chart == 3:
        return 0.0 < y[0] < M_PI and 0.0 < y[1] < M_PI
    return True


cdef double _trial(int chart, double p, const double* y, double hs, double* k1,
                   double* ynew, double* k7, double rtol, double atol) noexcept nogil:
    """One DP5(4) trial step from ``y``; returns the scaled error norm."""
    cdef int m = 2 * _dim(chart)
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double k5[MAXDIM]
    cdef double k6[MAXDIM]
    cdef double tmp[MAXDIM]
    cdef int i
    cdef double e, q, sc, en = 0.0
    for i in range(m):
        tmp[i] = y[i] + hs * A21 * k1[i]
    _rhs(chart, p, tmp, k2)
    for i in range(m):
        tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
    _rhs(chart, p, tmp, k3)
    for i in range(m):
        tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    _rhs(chart, p, tmp, k4)
    for i in range(m):
        tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    _rhs(chart, p, tmp, k5)
    for i in range(m):
        tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    _rhs(chart, p, tmp, k6)
    for i in range(m):
        ynew[i] = y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    _rhs(chart, p, ynew, k7)
    for i in range(m):
        e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        sc = atol + rtol * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
        q = fabs(e) / sc
        if not isfinite(q) or not isfinite(k7[i]):
            return 1e300
        if q > en:
            en = q
    return en


cdef inline double _grow(double en) noexcept nogil:
    cdef double f
    if en == 0.0:
        return FAC_MAX
    f = SAFETY * pow(en, -0.2)
    if f > FAC_MAX:
        return FAC_MAX
    if f < FAC_MIN:
        return FAC_MIN
    return f


cdef inline double _shrink(double en) noexcept nogil:
    cdef double f
    if en >= 1e300:
        return FAC_MIN
    f = SAFETY * pow(en, -0.2)
    if f > 1.0:
        return 1.0
    if f < FAC_MIN:
        return FAC_MIN
    return f


def rhs(int chart, double param, y):
    cdef double yy[MAXDIM]
    cdef double out[MAXDIM]
    cdef int m = 2 * _dim(chart)
    cdef int i
    for i in range(m):
        yy[i] = y[i]
    _rhs(chart, param, yy, out)
    return [out[i] for i in range(m)]


def interior(int chart, y):
    cdef double yy[MAXDIM]
    cdef int i
    for i in range(2 * _dim(chart)):
        yy[i] = y[i]
    return bool(_interior(chart, yy))


def integrate(int chart, double param, y0, double t0, double t_end, double rtol,
              double atol, double h0, long max_steps, double hmin):
    cdef int m = 2 * _dim(chart)
    cdef double y[MAXDIM]
    cdef double ynew[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k7[MAXDIM]
    cdef int i
    cdef double t = t0, h = fabs(h0), hs, en
    cdef double direction = 1.0 if t_end >= t0 else -1.0
    cdef long steps = 0, n_acc = 0, n_rej = 0
    cdef int status = 0
    cdef bint last
    for i in range(m):
        y[i] = y0[i]
    ts = [t]
    ys = [[y[i] for i in range(m)]]
    if not _interior(chart, y):
        return np.array(ts), np.array(ys), 0, 0, 1
    _rhs(chart, param, y, k1)
    while direction * (t_end - t) > 0.0:
        if steps >= max_steps:
            status = 3
            break
        steps += 1
        if h < hmin:
            status = 2
            break
        last = False
        if h >= fabs(t_end - t):
            h = fabs(t_end - t)
            last = True
        hs = direction * h
        en = _trial(chart, param, y, hs, k1, ynew, k7, rtol, atol)
        if en <= 1.0:
            if not _interior(chart, ynew):
                status = 1
                break
            t = t_end if last else t + hs
            for i in range(m):
                y[i] = ynew[i]
                k1[i] = k7[i]
            ts.append(t)
            ys.append([y[i] for i in range(m)])
            n_acc += 1
            h *= _grow(en)
        else:
            n_rej += 1
            h *= _shrink(en)
    return np.array(ts), np.array(ys), n_acc, n_rej, status


cdef int _endpoint(int chart, double p, double* y, double t0, double t_end, double rtol,
                   double atol, double h0, long max_steps, double hmin) noexcept nogil:
    cdef int m = 2 * _dim(chart)
    cdef double ynew[MAXDIM]
    cdef double k1[MAXDIM]
    cdef double k7[MAXDIM]
    cdef int i
    cdef double t = t0, h = fabs(h0), hs, en
    cdef double direction = 1.0 if t_end >= t0 else -1.0
    cdef long steps = 0
    cdef bint last
    if not _interior(chart, y):
        return 1
    _rhs(chart, p, y, k1)
    while direction * (t_end - t) > 0.0:
        if steps >= max_steps:
            return 3
        steps += 1
        if h < hmin:
            return 2
        last = False
        if h >= fabs(t_end - t):
            h = fabs(t_end - t)
            last = True
        hs = direction * h
        en = _trial(chart, p, y, hs, k1, ynew, k7, rtol, atol)
        if en <= 1.0:
            if not _interior(chart, ynew):
                return 1
            t = t_end if last else t + hs
            for i in range(m):
                y[i] = ynew[i]
                k1[i] = k7[i]
            h *= _grow(en)
        else:
            h *= _shrink(en)
    return 0


def integrate_batch(int chart, double param, Y0, double t0, double t_end, double rtol,
                    double atol, double h0, long max_steps, double hmin):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Y = np.array(Y0, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t nb = Y.shape[0], j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] status = np.zeros(nb, dtype=np.int64)
    cdef double[:, ::1] Yv = Y
    cdef cnp.int64_t[::1] sv = status
    with nogil:
        for j in range(nb):
            sv[j] = _endpoint(chart, param, &Yv[j, 0], t0, t_end, rtol, atol, h0, max_steps, hmin)
    return Y, status
