# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event-search kernels; same contract as ``_kernels_py``."""
import numpy as np

from libc.math cimport sin, cos, sqrt, fabs, isinf

cdef enum:
    EVENT = 0
    HORIZON = 1
    BISECT_FAIL = 3
    HALT_HORIZON = 0
    HALT_FLOOR = 1
    HALT_MAX_EVENTS = 2
    CHUNK_FULL = 4
    MAX_BISECT = 200


cdef void _eval(const double[::1] om, const double complex[:, ::1] CU,
                const double complex[::1] wk, const double complex[::1] s, double tau,
                double complex[::1] d, double complex[::1] w,
                double* wn2, double* yn2) noexcept nogil:
    cdef Py_ssize_t n = om.shape[0], p = CU.shape[0], i, j
    cdef double th, sc, pr, pi_, acc = 0.0
    cdef double complex ph, acc_c
    for j in range(n):
        th = 0.5 * om[j] * tau
        if fabs(th) < 1e-8:
            sc = 1.0
        else:
            sc = sin(th) / th
        pr = tau * sc * cos(th)
        pi_ = tau * sc * sin(th)
        ph = pr + 1j * pi_
        d[j] = ph * s[j]
        w[j] = wk[j] + d[j]
        acc += w[j].real * w[j].real + w[j].imag * w[j].imag
    wn2[0] = acc
    acc = 0.0
    for i in range(p):
        acc_c = 0.0
        for j in range(n):
            acc_c = acc_c + CU[i, j] * d[j]
        acc += acc_c.real * acc_c.real + acc_c.imag * acc_c.imag
    yn2[0] = acc


cdef int _next_event(const double[::1] om, const double complex[:, ::1] CU,
                     const double complex[::1] wk, const double complex[::1] s,
                     double gamma, double tau_max, double dt_max, double event_tol,
                     double normC, double complex[::1] d, double complex[::1] w,
                     double* tau_out, double* hi_out) noexcept nogil:
    cdef Py_ssize_t n = om.shape[0], j
    cdef double S = 0.0, g2 = gamma * gamma, tau = 0.0, wn2 = 0.0, yn2 = 0.0
    cdef double rate, gap, step, hi, lo, mid, wn2_hi, yn2_hi, wm, ym
    cdef bint last
    cdef int it
    for j in range(n):
        S += s[j].real * s[j].real + s[j].imag * s[j].imag
        wn2 += wk[j].real * wk[j].real + wk[j].imag * wk[j].imag
    S = sqrt(S)
    if S == 0.0 or tau_max <= 0.0:
        for j in range(n):
            w[j] = wk[j]
        tau_out[0] = tau_max if tau_max > 0.0 else 0.0
        return HORIZON
    if isinf(gamma):
        # trigger never fires
        _eval(om, CU, wk, s, tau_max, d, w, &wn2, &yn2)
        tau_out[0] = tau_max
        return HORIZON
    rate = S * (gamma + normC)
    while True:
        gap = gamma * sqrt(wn2) - sqrt(yn2)
        step = gap / rate
        if step < dt_max:
            step = dt_max
        hi = tau + step
        last = hi >= tau_max
        if last:
            hi = tau_max
        _eval(om, CU, wk, s, hi, d, w, &wn2_hi, &yn2_hi)
        if g2 * wn2_hi - yn2_hi < 0.0:
            lo = tau
            it = 0
            while hi - lo > event_tol:
                if it >= MAX_BISECT:
                    tau_out[0] = lo
                    hi_out[0] = hi
                    return BISECT_FAIL
                mid = 0.5 * (lo + hi)
                _eval(om, CU, wk, s, mid, d, w, &wm, &ym)
                if g2 * wm - ym >= 0.0:
                    lo = mid
                else:
                    hi = mid
                it += 1
            _eval(om, CU, wk, s, lo, d, w, &wm, &ym)
            tau_out[0] = lo
            return EVENT
        if last:
            tau_out[0] = tau_max
            return HORIZON
        tau = hi
        wn2 = wn2_hi
        yn2 = yn2_hi


def next_event(omega, CU, w_k, s, double gamma, double tau_max, double dt_max,
               double event_tol, double normC):
    cdef const double[::1] om = np.ascontiguousarray(omega, dtype=np.float64)
    cdef const double complex[:, ::1] cu = np.ascontiguousarray(CU, dtype=np.complex128)
    cdef const double complex[::1] wk = np.ascontiguousarray(w_k, dtype=np.complex128)
    cdef const double complex[::1] sv = np.ascontiguousarray(s, dtype=np.complex128)
    n = om.shape[0]
    d_arr = np.empty(n, dtype=np.complex128)
    w_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] d = d_arr
    cdef double complex[::1] w = w_arr
    cdef double tau = 0.0, hi = 0.0
    cdef int code
    with nogil:
        code = _next_event(om, cu, wk, sv, gamma, tau_max, dt_max, event_tol, normC,
                           d, w, &tau, &hi)
    if code == BISECT_FAIL:
        return code, tau, np.array([tau, hi], dtype=np.complex128)
    return code, tau, w_arr


def run_events(omega, CU, Emod, w0, double gamma, double t0, double horizon, double dt_max,
               double event_tol, double normC, double floor_abs, long max_events,
               long capacity):
    cdef const double[::1] om = np.ascontiguousarray(omega, dtype=np.float64)
    cdef const double complex[:, ::1] cu = np.ascontiguousarray(CU, dtype=np.complex128)
    cdef const double complex[:, ::1] E = np.ascontiguousarray(Emod, dtype=np.complex128)
    cdef Py_ssize_t n = om.shape[0], i, j
    cdef long limit = max_events if max_events < capacity else capacity
    times_arr = np.empty(limit, dtype=np.float64)
    states_arr = np.empty((limit, n), dtype=np.complex128)
    wcur_arr = np.ascontiguousarray(w0, dtype=np.complex128).copy()
    s_arr = np.empty(n, dtype=np.complex128)
    d_arr = np.empty(n, dtype=np.complex128)
    wnew_arr = np.empty(n, dtype=np.complex128)
    cdef double[::1] times = times_arr
    cdef double complex[:, ::1] states = states_arr
    cdef double complex[::1] wcur = wcur_arr
    cdef double complex[::1] sv = s_arr
    cdef double complex[::1] d = d_arr
    cdef double complex[::1] wnew = wnew_arr
    cdef double t = t0, tau = 0.0, hi = 0.0, nrm
    cdef double complex acc
    cdef long count = 0
    cdef int code, status = HALT_MAX_EVENTS
    with nogil:
        while count < limit:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc = acc + E[i, j] * wcur[j]
                sv[i] = 1j * om[i] * wcur[i] + acc
            code = _next_event(om, cu, wcur, sv, gamma, horizon - t, dt_max, event_tol,
                               normC, d, wnew, &tau, &hi)
            if code == BISECT_FAIL:
                status = BISECT_FAIL
                break
            if code == HORIZON:
                for j in range(n):
                    wcur[j] = wnew[j]
                t = horizon
                status = HALT_HORIZON
                break
            t = t + tau
            nrm = 0.0
            for j in range(n):
                wcur[j] = wnew[j]
                states[count, j] = wnew[j]
                nrm += wnew[j].real * wnew[j].real + wnew[j].imag * wnew[j].imag
            times[count] = t
            count += 1
            if sqrt(nrm) <= floor_abs:
                status = HALT_FLOOR
                break
        else:
            status = CHUNK_FULL if capacity < max_events else HALT_MAX_EVENTS
    failure = (t + tau, t + hi) if status == BISECT_FAIL else None
    return (status, times_arr[:count], states_arr[:count], t, wcur_arr, failure)
