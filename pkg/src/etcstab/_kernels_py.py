"""Pure numpy event-search kernels (fallback for the compiled ``_kernels``).

Both implementations work in modal coordinates of the skew generator:
``At = U diag(i omega) U^H``.  During a hold interval started at modal state
``w_k`` with modal velocity ``s = i omega w_k + c`` the state is

    w(tau) = w_k + phi(omega, tau) * s,   phi = (exp(i omega tau) - 1) / (i omega),

and ``|w'(tau)| = |s|`` is constant.  The trigger margin is
``gamma^2 |w(tau)|^2 - |CU (w(tau) - w_k)|^2``.
"""
from __future__ import annotations

import numpy as np

EVENT = 0
HORIZON = 1
BISECT_FAIL = 3

HALT_HORIZON = 0
HALT_FLOOR = 1
HALT_MAX_EVENTS = 2
CHUNK_FULL = 4

MAX_BISECT = 200


def phi(omega: np.ndarray, tau: float) -> np.ndarray:
    th = 0.5 * omega * tau
    sc = np.ones_like(th)
    big = np.abs(th) >= 1e-8
    sc[big] = np.sin(th[big]) / th[big]
    return tau * sc * np.exp(1j * th)


def _eval(omega, CU, w_k, s, tau):
    d = phi(omega, tau) * s
    w = w_k + d
    y = CU @ d
    return w, float(np.vdot(w, w).real), float(np.vdot(y, y).real)


def next_event(omega, CU, w_k, s, gamma, tau_max, dt_max, event_tol, normC):
    """Locate the first zero of the trigger margin after ``tau = 0``.

    Returns ``(status, tau, w)``; ``status`` is ``EVENT`` or ``HORIZON`` (no
    event before ``tau_max``) or ``BISECT_FAIL`` (``tau``/``w`` then hold the
    unresolved bracket ends).
    """
    S = float(np.linalg.norm(s))
    g2 = gamma * gamma
    if S == 0.0 or tau_max <= 0.0:
        return HORIZON, max(tau_max, 0.0), w_k.copy()
    if np.isinf(gamma):
        # trigger never fires
        return HORIZON, tau_max, _eval(omega, CU, w_k, s, tau_max)[0]
    tau = 0.0
    wn2 = float(np.vdot(w_k, w_k).real)
    yn2 = 0.0
    rate = S * (gamma + normC)
    while True:
        gap = gamma * np.sqrt(wn2) - np.sqrt(yn2)
        step = max(gap / rate, dt_max)
        hi = tau + step
        last = hi >= tau_max
        if last:
            hi = tau_max
        w_hi, wn2_hi, yn2_hi = _eval(omega, CU, w_k, s, hi)
        if g2 * wn2_hi - yn2_hi < 0.0:
            lo = tau
            for _ in range(MAX_BISECT):
                if hi - lo <= event_tol:
                    break
                mid = 0.5 * (lo + hi)
                _, wm, ym = _eval(omega, CU, w_k, s, mid)
                if g2 * wm - ym >= 0.0:
                    lo = mid
                else:
                    hi = mid
            else:
                return BISECT_FAIL, lo, np.array([lo, hi], dtype=complex)
            w_lo, _, _ = _eval(omega, CU, w_k, s, lo)
            return EVENT, lo, w_lo
        if last:
            return HORIZON, tau_max, w_hi
        tau, wn2, yn2 = hi, wn2_hi, yn2_hi


def run_events(omega, CU, Emod, w0, gamma, t0, horizon, dt_max, event_tol, normC,
               floor_abs, max_events, capacity):
    """Iterate trigger events from ``(t0, w0)``.

    Records at most ``capacity`` events (``t0`` itself excluded) and returns
    ``(status, times, states, t_end, w_end, failure)``; ``CHUNK_FULL`` asks the
    caller to resume from the last recorded event.
    """
    times = []
    states = []
    t = float(t0)
    w = np.array(w0, dtype=complex)
    status = HALT_MAX_EVENTS
    for _ in range(min(max_events, capacity)):
        s = 1j * omega * w + Emod @ w
        code, tau, w_new = next_event(omega, CU, w, s, gamma, horizon - t, dt_max,
                                      event_tol, normC)
        if code == BISECT_FAIL:
            return BISECT_FAIL, times, states, t, w, (t + w_new[0].real, t + w_new[1].real)
        if code == HORIZON:
            return HALT_HORIZON, times, states, float(horizon), w_new, None
        t = t + tau
        w = w_new
        times.append(t)
        states.append(w)
        if float(np.linalg.norm(w)) <= floor_abs:
            return HALT_FLOOR, times, states, t, w, None
    if capacity < max_events:
        status = CHUNK_FULL
    return status, times, states, t, w, None
