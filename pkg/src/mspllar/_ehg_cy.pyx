# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled filter recursion. Mirrors ``_ehg_py.ehg_filter_core`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, lgamma, log, log1p

cnp.import_array()

DEF UNREACHABLE_EPS = 1e-300
DEF ETA_CLAMP = 700.0


def ehg_filter_core(y, X, d, a, b, beta, gamma_star, cur_state,
                    lambda0, y0, prior, raw_count_feedback=False):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] betav = np.ascontiguousarray(beta, dtype=np.float64)
    cdef const double[:, ::1] gs = np.ascontiguousarray(gamma_star, dtype=np.float64)
    cdef const long[::1] cur = np.ascontiguousarray(cur_state, dtype=np.int64)
    cdef const double[::1] lam0 = np.ascontiguousarray(lambda0, dtype=np.float64)
    cdef const double[::1] pri = np.ascontiguousarray(prior, dtype=np.float64)

    cdef Py_ssize_t T = yv.shape[0]
    cdef Py_ssize_t M = gs.shape[0]
    cdef Py_ssize_t r = Xv.shape[1]
    cdef bint raw_fb = bool(raw_count_feedback)

    lam_arr = np.empty((T, M))
    logpmf_arr = np.empty((T, M))
    filt_arr = np.empty((T, M))
    pred_next_arr = np.empty((T, M))
    log_mix_arr = np.empty(T)
    cdef double[:, ::1] lam = lam_arr
    cdef double[:, ::1] logpmf = logpmf_arr
    cdef double[:, ::1] filt = filt_arr
    cdef double[:, ::1] pred_next = pred_next_arr
    cdef double[::1] log_mix = log_mix_arr

    buf = np.empty((5, M))
    cdef double[:, ::1] work = buf
    cdef double[::1] lam_prev = work[0]
    cdef double[::1] filt_prev = work[1]
    cdef double[::1] pred = work[2]
    cdef double[::1] eta = work[3]
    cdef double[::1] w = work[4]

    cdef Py_ssize_t t, i, j, k, c
    cdef double y_prev = y0
    cdef double wsum, num, fb, e, ec, lgy, yt, wmax, s, mix, qll
    cdef long n_clamped = 0

    for j in range(M):
        lam_prev[j] = lam0[j]
        filt_prev[j] = pri[j]
        pred[j] = pri[j]

    qll = 0.0
    for t in range(T):
        yt = yv[t]
        lgy = lgamma(yt + 1.0)
        fb = y_prev if raw_fb else log1p(y_prev)

        wsum = 0.0
        for i in range(M):
            wsum += filt_prev[i] * lam_prev[i]

        for j in range(M):
            if pred[j] >= UNREACHABLE_EPS:
                num = 0.0
                for i in range(M):
                    num += gs[i, j] * filt_prev[i] * lam_prev[i]
                e = num / pred[j]
            else:
                e = wsum
            c = cur[j]
            e = dv[c] + av[c] * e + bv[c] * fb
            for k in range(r):
                e += betav[c, k] * Xv[t, k]
            eta[j] = e

        wmax = -np.inf
        for j in range(M):
            e = eta[j]
            if e > ETA_CLAMP:
                n_clamped += 1
                ec = ETA_CLAMP
            else:
                ec = e
            logpmf[t, j] = yt * e - exp(ec) - lgy
            if pred[j] > 0.0:
                w[j] = log(pred[j]) + logpmf[t, j]
                if w[j] > wmax:
                    wmax = w[j]
            else:
                w[j] = -np.inf

        if wmax == -np.inf or wmax != wmax:
            return (-np.inf, lam_arr, logpmf_arr, filt_arr, pred_next_arr,
                    log_mix_arr, int(n_clamped), int(t))

        s = 0.0
        for j in range(M):
            s += exp(w[j] - wmax)
        mix = wmax + log(s)
        log_mix[t] = mix
        qll += mix

        for j in range(M):
            filt[t, j] = exp(w[j] - mix)
        for j in range(M):
            s = 0.0
            for i in range(M):
                s += filt[t, i] * gs[i, j]
            pred_next[t, j] = s

        for j in range(M):
            lam[t, j] = eta[j]
            lam_prev[j] = eta[j]
            filt_prev[j] = filt[t, j]
            pred[j] = pred_next[t, j]
        y_prev = yt

    return (qll, lam_arr, logpmf_arr, filt_arr, pred_next_arr,
            log_mix_arr, int(n_clamped), -1)
