"""Event-triggered sample-and-hold simulation and its diagnostics.

Between events the input is frozen at ``u_k = K C z(t_k)`` and the state
solves ``z' = A z + B u_k`` exactly (modal form of the skew generator, or the
augmented matrix exponential as a reference).  An event fires when

    |C (z(t) - z(t_k))|_Y^2 <= gamma^2 |z(t)|_H^2

is about to fail; its time is bracketed by a forward scan and refined by
bisection down to ``event_tol``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from . import _kernels_py
from .core_system import ControlSystem, kappa as kappa_rate, norm_BKC, norm_C
from .lyapunov import LyapunovFunctional, lyap_values

try:
    if os.environ.get("ETCSTAB_PURE_PYTHON"):
        raise ImportError("pure Python kernels requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

KERNEL_BACKEND = "compiled" if _compiled is not None else "python"

HALT_REASONS = {_kernels_py.HALT_HORIZON: "horizon", _kernels_py.HALT_FLOOR: "state_floor",
                _kernels_py.HALT_MAX_EVENTS: "max_events"}
CHUNK_CAPACITY = 1 << 16
REL_SLACK = 1e-8


def get_kernels(backend: str | None = None):
    """Kernel module for ``backend`` in {None, "compiled", "python"}."""
    if backend is None:
        backend = KERNEL_BACKEND
    if backend == "python":
        return _kernels_py
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available; build the extension")
        return _compiled
    raise ValueError(f"unknown kernel backend {backend!r}")


class EventLocalizationError(RuntimeError):
    def __init__(self, message: str, bracket: tuple[float, float]):
        self.bracket = bracket
        super().__init__(f"{message}: bracket [{bracket[0]!r}, {bracket[1]!r}]")


# ---------------------------------------------------------------------------
# configuration and hold propagation
# ---------------------------------------------------------------------------

def default_dt_max(sys: ControlSystem, gamma: float) -> float:
    rates = [np.linalg.norm(sys.Aclt, 2)]
    if math.isfinite(gamma):
        rates.append(kappa_rate(sys, gamma))
    rates = [r for r in rates if r > 0]
    return 0.1 / max(rates) if rates else 1.0


@dataclass(frozen=True)
class TriggerConfig:
    gamma: float
    horizon: float
    dt_max: float | None = None
    event_tol: float = 1e-9
    state_floor: float = 1e-12
    max_events: int = 1_000_000
    output_dt: float | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if not self.event_tol > 0:
            raise ValueError("event_tol must be positive")
        if self.dt_max is not None and not self.event_tol < self.dt_max:
            raise ValueError("need 0 < event_tol < dt_max")
        if not 0.0 <= self.state_floor < 1.0:
            raise ValueError("state_floor must lie in [0, 1)")
        if self.max_events < 1:
            raise ValueError("max_events must be at least 1")
        if self.output_dt is not None and not self.output_dt > 0:
            raise ValueError("output_dt must be positive")

    def resolved(self, sys: ControlSystem) -> "TriggerConfig":
        dt = self.dt_max if self.dt_max is not None else default_dt_max(sys, self.gamma)
        if not self.event_tol < dt:
            raise ValueError(f"need event_tol < dt_max (dt_max={dt:.3e})")
        out_dt = self.output_dt if self.output_dt is not None else self.horizon / 1000.0
        return TriggerConfig(self.gamma, self.horizon, dt, self.event_tol, self.state_floor,
                             self.max_events, out_dt)


class ModalHold(NamedTuple):
    """Spectral data of the skew generator used by the hold propagator."""
    omega: np.ndarray
    U: np.ndarray
    Uh: np.ndarray
    CU: np.ndarray
    Emod: np.ndarray
    normC: float


_modal_cache: dict[int, tuple[ControlSystem, ModalHold]] = {}


def modal_hold(sys: ControlSystem) -> ModalHold:
    hit = _modal_cache.get(id(sys))
    if hit is not None and hit[0] is sys:
        return hit[1]
    # i At is Hermitian for skew-symmetric At
    mu, U = np.linalg.eigh(1j * sys.At)
    omega = -mu
    Uh = U.conj().T
    modal = ModalHold(omega=np.ascontiguousarray(omega), U=U, Uh=Uh,
                      CU=np.ascontiguousarray(sys.Ct @ U),
                      Emod=np.ascontiguousarray(Uh @ sys.BKCt @ U), normC=norm_C(sys))
    if len(_modal_cache) > 64:
        _modal_cache.clear()
    _modal_cache[id(sys)] = (sys, modal)
    return modal


def _modal_states(modal: ModalHold, W_k: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Orthonormal states at offsets ``dt`` after holds started at rows of ``W_k``."""
    S = 1j * modal.omega * W_k + W_k @ modal.Emod.T
    th = 0.5 * np.outer(dt, modal.omega)
    sc = np.ones_like(th)
    big = np.abs(th) >= 1e-8
    sc[big] = np.sin(th[big]) / th[big]
    ph = dt[:, None] * sc * np.exp(1j * th)
    return ((W_k + ph * S) @ modal.U.T).real


def propagate_hold(sys: ControlSystem, z_k, tau: float, method: str = "expm",
                   z_hold=None) -> np.ndarray:
    """State after a hold of duration ``tau`` started from ``z_k``.

    The held input is ``u = K C z_hold`` with ``z_hold`` defaulting to
    ``z_k``.  ``method="expm"`` uses the augmented exponential
    ``exp(tau [[A, b], [0, 0]])`` in original coordinates; ``method="modal"``
    uses the spectral form of the skew generator.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    z_k = np.asarray(z_k, dtype=float)
    z_hold = z_k if z_hold is None else np.asarray(z_hold, dtype=float)
    if method == "expm":
        n = sys.n
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = sys.A
        aug[:n, n] = sys.B @ sys.K @ sys.C @ z_hold
        return (sla.expm(tau * aug) @ np.append(z_k, 1.0))[:n]
    if method == "modal":
        modal = modal_hold(sys)
        w = modal.Uh @ sys.H.to_orthonormal(z_k)
        c = modal.Emod @ (modal.Uh @ sys.H.to_orthonormal(z_hold))
        w_tau = w + _kernels_py.phi(modal.omega, float(tau)) * (1j * modal.omega * w + c)
        return sys.H.from_orthonormal((modal.U @ w_tau).real)
    raise ValueError(f"unknown method {method!r}")


def trigger_margin(sys: ControlSystem, z, z_k, gamma: float) -> float:
    """``gamma^2 |z|_H^2 - |C (z - z_k)|_Y^2``; the hold may continue while >= 0."""
    z = np.asarray(z, dtype=float)
    dz = z - np.asarray(z_k, dtype=float)
    return gamma**2 * sys.H.norm(z) ** 2 - sys.Y.norm(sys.C @ dz) ** 2


class NextEvent(NamedTuple):
    t: float
    z: np.ndarray
    horizon_reached: bool


def next_event(sys: ControlSystem, z_k, t_k: float, cfg: TriggerConfig,
               backend: str | None = None) -> NextEvent:
    """Next trigger time after ``t_k`` (or the horizon state if none occurs)."""
    cfg = cfg.resolved(sys)
    kern = get_kernels(backend)
    modal = modal_hold(sys)
    x = sys.H.to_orthonormal(z_k)
    if not trigger_margin(sys, z_k, z_k, cfg.gamma) >= 0:
        raise ValueError("trigger margin must be nonnegative at the hold start")
    w = modal.Uh @ x
    s = 1j * modal.omega * w + modal.Emod @ w
    code, tau, w_new = kern.next_event(modal.omega, modal.CU, w, s, cfg.gamma,
                                       cfg.horizon - t_k, cfg.dt_max, cfg.event_tol, modal.normC)
    if code == _kernels_py.BISECT_FAIL:
        raise EventLocalizationError("event bisection did not converge",
                                     (t_k + w_new[0].real, t_k + w_new[1].real))
    if code == _kernels_py.EVENT and tau <= 0.0:
        raise EventLocalizationError("scan step too coarse; reduce dt_max", (t_k, t_k + cfg.dt_max))
    z_new = sys.H.from_orthonormal((modal.U @ w_new).real)
    return NextEvent(t_k + tau, z_new, code == _kernels_py.HORIZON)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TriggeredTrajectory:
    """Sampled trajectory of the sample-and-hold loop.

    Samples are the uniform output grid merged with every event time;
    ``interval[j]`` is the index ``k`` of the hold interval containing sample
    ``j`` (an event sample starts its own interval).
    """

    sample_times: np.ndarray
    states: np.ndarray
    interval: np.ndarray
    is_event: np.ndarray
    event_times: np.ndarray
    event_states: np.ndarray
    held_inputs: np.ndarray
    halted_reason: str
    norms: np.ndarray
    gamma: float
    lyap_values: np.ndarray | None = None
    event_lyap: np.ndarray | None = None
    periodic: bool = False
    sys: ControlSystem | None = field(default=None, repr=False)

    @property
    def dwell_times(self) -> np.ndarray:
        return np.diff(self.event_times)

    @property
    def n_events(self) -> int:
        """Number of updates after the initial sample at ``t = 0``."""
        return max(0, len(self.event_times) - 1)

    @property
    def t_end(self) -> float:
        return float(self.sample_times[-1])

    @property
    def zeno_suspected(self) -> bool:
        return self.halted_reason == "max_events"

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["t", "norm_H"] + (["lyap"] if self.lyap_values is not None else []) + ["event", "k"]
        w.writerow(cols)
        for j in range(len(self.sample_times)):
            row = [_fmt(self.sample_times[j]), _fmt(self.norms[j])]
            if self.lyap_values is not None:
                row.append(_fmt(self.lyap_values[j]))
            row += [int(self.is_event[j]), int(self.interval[j])]
            w.writerow(row)
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t_k", "dwell", "norm_H", "input_norm"])
        ev_norms = self.norms[self.is_event]
        dwell = self.dwell_times
        U = self.sys.U if self.sys is not None else None
        for k, t in enumerate(self.event_times):
            u = self.held_inputs[k]
            un = U.norm(u) if U is not None else float(np.linalg.norm(u))
            w.writerow([k, _fmt(t), _fmt(dwell[k]) if k < len(dwell) else "",
                        _fmt(ev_norms[k]), _fmt(un)])
        return buf.getvalue()


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _assemble(sys: ControlSystem, modal: ModalHold, event_times, W, t_end: float, w_end,
              output_dt: float, halted: str, gamma: float, F: LyapunovFunctional | None,
              periodic: bool = False) -> TriggeredTrajectory:
    event_times = np.asarray(event_times, dtype=float)
    W = np.asarray(W, dtype=complex).reshape(len(event_times), sys.n)
    grid = np.arange(0.0, t_end, output_dt) if t_end > 0 else np.zeros(0)
    grid = np.append(grid, t_end)
    grid = np.setdiff1d(grid, event_times)
    k_grid = np.searchsorted(event_times, grid, side="right") - 1
    X_grid = _modal_states(modal, W[k_grid], grid - event_times[k_grid]) if grid.size else \
        np.zeros((0, sys.n))
    if grid.size and grid[-1] == t_end and w_end is not None:
        X_grid[-1] = (modal.U @ w_end).real
    X_ev = (W @ modal.U.T).real
    times = np.concatenate([event_times, grid])
    order = np.argsort(times, kind="stable")
    X = np.concatenate([X_ev, X_grid])[order]
    interval = np.concatenate([np.arange(len(event_times)), k_grid])[order]
    is_event = np.concatenate([np.ones(len(event_times), bool), np.zeros(grid.size, bool)])[order]
    Z = X @ sys.H.chol_inv.T
    Z_ev = Z[is_event]
    held = Z_ev @ (sys.K @ sys.C).T
    lv = ev_lv = None
    if F is not None:
        lv = lyap_values(F, X.T)
        ev_lv = lv[is_event]
    return TriggeredTrajectory(
        sample_times=times[order], states=Z, interval=interval, is_event=is_event,
        event_times=event_times, event_states=Z_ev, held_inputs=held, halted_reason=halted,
        norms=np.linalg.norm(X, axis=1), gamma=gamma, lyap_values=lv, event_lyap=ev_lv,
        periodic=periodic, sys=sys)


def simulate(sys: ControlSystem, z0, cfg: TriggerConfig, F: LyapunovFunctional | None = None,
             backend: str | None = None) -> TriggeredTrajectory:
    """Run the event-triggered loop from ``t0 = 0`` until horizon, floor or event cap."""
    cfg = cfg.resolved(sys)
    kern = get_kernels(backend)
    modal = modal_hold(sys)
    x0 = sys.H.to_orthonormal(np.asarray(z0, dtype=float))
    n0 = float(np.linalg.norm(x0))
    w0 = modal.Uh @ x0
    if n0 == 0.0:
        return _assemble(sys, modal, [0.0], [w0], 0.0, None, cfg.output_dt, "state_floor",
                         cfg.gamma, F)
    times = [np.zeros(1)]
    states = [w0[None, :]]
    t, w = 0.0, w0
    remaining = cfg.max_events
    floor_abs = cfg.state_floor * n0
    while True:
        status, ts, ws, t_end, w_end, failure = kern.run_events(
            modal.omega, modal.CU, modal.Emod, w, cfg.gamma, t, cfg.horizon, cfg.dt_max,
            cfg.event_tol, modal.normC, floor_abs, remaining, CHUNK_CAPACITY)
        ts = np.asarray(ts, dtype=float)
        if len(ts):
            times.append(ts)
            states.append(np.asarray(ws, dtype=complex).reshape(len(ts), sys.n))
        if status == _kernels_py.BISECT_FAIL:
            raise EventLocalizationError("event bisection did not converge", failure)
        if status == _kernels_py.CHUNK_FULL:
            remaining -= len(ts)
            t, w = float(t_end), np.asarray(w_end, dtype=complex)
            continue
        break
    halted = HALT_REASONS[status]
    event_times = np.concatenate(times)
    W = np.concatenate(states)
    bad = np.flatnonzero(np.diff(event_times) <= 0.0)
    if bad.size:
        t_bad = float(event_times[bad[0]])
        raise EventLocalizationError("scan step too coarse; reduce dt_max",
                                     (t_bad, t_bad + cfg.dt_max))
    if halted == "horizon":
        t_final, w_final = cfg.horizon, np.asarray(w_end, dtype=complex)
    else:
        t_final, w_final = float(event_times[-1]), None
    return _assemble(sys, modal, event_times, W, t_final, w_final, cfg.output_dt, halted,
                     cfg.gamma, F)


def simulate_periodic(sys: ControlSystem, z0, period: float, T: float,
                      output_dt: float | None = None,
                      F: LyapunovFunctional | None = None) -> TriggeredTrajectory:
    """Sample-and-hold loop with updates at ``t_k = k * period`` (no trigger)."""
    if not period > 0:
        raise ValueError("period must be positive")
    modal = modal_hold(sys)
    w = modal.Uh @ sys.H.to_orthonormal(np.asarray(z0, dtype=float))
    n_upd = int(math.ceil(T / period - 1e-12))
    times = [0.0]
    W = [w]
    for k in range(1, n_upd):
        tk = k * period
        x = _modal_states(modal, W[-1][None, :], np.array([period]))[0]
        times.append(tk)
        W.append(modal.Uh @ x)
    return _assemble(sys, modal, times, W, float(T), None,
                     output_dt if output_dt is not None else T / 1000.0, "horizon",
                     math.inf, F, periodic=True)


def continuous_flow(sys: ControlSystem, z0, times) -> np.ndarray:
    """States of the continuously controlled loop ``z' = (A + BKC) z`` (rows)."""
    x0 = sys.H.to_orthonormal(np.asarray(z0, dtype=float))
    out = [sys.H.from_orthonormal(sla.expm(t * sys.Aclt) @ x0) for t in np.atleast_1d(times)]
    return np.array(out)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_margin: float
    t_worst: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "worst_margin": self.worst_margin, "t_worst": self.t_worst, **self.details}


def _ortho(traj: TriggeredTrajectory) -> np.ndarray:
    return traj.states @ traj.sys.H.chol.T


def verify_sandwich(traj: TriggeredTrajectory, kappa: float, rel_slack: float = REL_SLACK) -> CheckReport:
    """``|z0| e^{-kappa t} <= |z(t)| <= |z0| e^{kappa t}`` at every sample (log form)."""
    nz = traj.norms
    t = traj.sample_times
    if nz[0] == 0.0:
        return CheckReport("sandwich", bool(np.all(nz == 0.0)), 0.0, 0.0)
    with np.errstate(divide="ignore"):
        lr = np.log(nz / nz[0])
    upper = kappa * t - lr
    lower = lr + kappa * t
    margin = np.minimum(upper, lower)
    j = int(np.argmin(margin))
    tol = math.log1p(rel_slack)
    return CheckReport("sandwich", bool(margin[j] >= -tol), float(margin[j]), float(t[j]),
                       {"kappa": kappa})


def derivative_norms(traj: TriggeredTrajectory) -> np.ndarray:
    """``|A z(t) + BKC z(t_k)|_H`` at every sample."""
    sys = traj.sys
    X = _ortho(traj)
    Xk = X[traj.is_event][traj.interval]
    return np.linalg.norm(X @ sys.At.T + Xk @ sys.BKCt.T, axis=1)


def verify_derivative_bound(traj: TriggeredTrajectory, sys: ControlSystem,
                            rel_slack: float = REL_SLACK) -> CheckReport:
    """``|z'(t)| <= |(A + BKC) z0| e^{t |BKC|}`` plus the per-event recursion."""
    nbkc = norm_BKC(sys)
    X = _ortho(traj)
    x0 = X[0]
    d0 = float(np.linalg.norm(sys.Aclt @ x0))
    speeds = derivative_norms(traj)
    t = traj.sample_times
    tol = math.log1p(rel_slack)
    if d0 == 0.0:
        ok = bool(np.all(speeds <= 1e-300))
        return CheckReport("derivative_bound", ok, 0.0, 0.0)
    with np.errstate(divide="ignore"):
        margin = math.log(d0) + nbkc * t - np.log(speeds)
    j = int(np.argmin(margin))
    ev = speeds[traj.is_event]
    dwell = traj.dwell_times
    with np.errstate(divide="ignore", invalid="ignore"):
        rec = np.log(ev[:-1]) + dwell * nbkc - np.log(ev[1:]) if len(ev) > 1 else np.zeros(0)
    rec = rec[np.isfinite(rec)] if rec.size else rec
    rec_min = float(rec.min()) if rec.size else math.inf
    # |z'| is constant on each hold interval
    drift = float(np.max(np.abs(speeds - ev[traj.interval]) / np.maximum(ev[traj.interval], 1e-300)))
    ok = bool(margin[j] >= -tol and rec_min >= -tol)
    return CheckReport("derivative_bound", ok, float(margin[j]), float(t[j]),
                       {"recursion_worst_margin": rec_min, "hold_speed_drift": drift})


def trigger_margins(traj: TriggeredTrajectory) -> np.ndarray:
    """Trigger margin of every sample relative to its own hold start."""
    sys = traj.sys
    X = _ortho(traj)
    Xk = X[traj.is_event][traj.interval]
    dY = (X - Xk) @ sys.Ct.T
    return traj.gamma**2 * np.sum(X * X, axis=1) - np.sum(dY * dY, axis=1)


def verify_trigger(traj: TriggeredTrajectory, rel_tol: float = REL_SLACK) -> CheckReport:
    """Margins stay ``>= -rel_tol |z|^2`` inside holds; near zero at each event."""
    sys = traj.sys
    m = trigger_margins(traj)
    sq = traj.norms**2
    inside = ~traj.is_event
    rel = np.where(sq > 0, m / np.maximum(sq, 1e-300), 0.0)
    worst = float(rel[inside].min()) if inside.any() else 0.0
    t_worst = float(traj.sample_times[inside][np.argmin(rel[inside])]) if inside.any() else 0.0
    # margin at each event relative to the previous hold start
    X = _ortho(traj)
    Xe = X[traj.is_event]
    if len(Xe) > 1:
        dY = (Xe[1:] - Xe[:-1]) @ sys.Ct.T
        em = traj.gamma**2 * np.sum(Xe[1:] ** 2, axis=1) - np.sum(dY * dY, axis=1)
        event_rel = float(np.max(np.abs(em) / np.maximum(np.sum(Xe[1:] ** 2, axis=1), 1e-300)))
    else:
        event_rel = 0.0
    return CheckReport("trigger", bool(worst >= -rel_tol), worst, t_worst,
                       {"event_margin_rel_max": event_rel})


def dwell_bound(sys: ControlSystem, z0, gamma: float, T: float) -> float:
    """Lower bound on every dwell time ``t_{k+1} - t_k`` with ``t_{k+1} <= T``."""
    if not T > 0:
        raise ValueError("T must be positive")
    x0 = sys.H.to_orthonormal(np.asarray(z0, dtype=float))
    n0 = float(np.linalg.norm(x0))
    if n0 == 0.0:
        raise ValueError("dwell bound undefined for the zero state")
    speed = float(np.linalg.norm(sys.Aclt @ x0))
    nc = norm_C(sys)
    if speed == 0.0 or nc == 0.0:
        return math.inf
    k = kappa_rate(sys, gamma)
    return gamma * math.exp(-(3.0 * k + norm_BKC(sys)) * T) * n0 / (2.0 * nc * speed)


def verify_dwell(traj: TriggeredTrajectory, z0=None) -> CheckReport:
    """Each dwell ending at ``t_{k+1}`` exceeds the bound evaluated at ``T = t_{k+1}``."""
    sys = traj.sys
    z0 = traj.states[0] if z0 is None else z0
    dw = traj.dwell_times
    if dw.size == 0:
        return CheckReport("dwell", True, math.inf, 0.0, {"events": 0})
    x0 = sys.H.to_orthonormal(z0)
    n0 = float(np.linalg.norm(x0))
    speed = float(np.linalg.norm(sys.Aclt @ x0))
    nc = norm_C(sys)
    k = kappa_rate(sys, traj.gamma)
    rate = 3.0 * k + norm_BKC(sys)
    ends = traj.event_times[1:]
    # log(dwell) - log(bound(t_{k+1}))
    with np.errstate(divide="ignore"):
        margin = (np.log(dw) - math.log(traj.gamma * n0 / (2.0 * nc * speed)) + rate * ends)
    j = int(np.argmin(margin))
    T = float(traj.event_times[-1])
    return CheckReport("dwell", bool(margin[j] >= 0.0), float(margin[j]), float(ends[j]),
                       {"min_dwell": float(dw.min()), "dwell_bound_T": dwell_bound(sys, z0, traj.gamma, T),
                        "events": int(dw.size)})


def verify_lyapunov_events(traj: TriggeredTrajectory, delta_beta: float,
                           rel_slack: float = 1e-6) -> CheckReport:
    """``V(t_{k+1}) <= V(t_k) exp(-2 delta_beta (t_{k+1} - t_k))`` across events."""
    if traj.event_lyap is None:
        raise ValueError("trajectory has no recorded Lyapunov values")
    V = traj.event_lyap
    if len(V) < 2:
        return CheckReport("lyapunov_events", True, math.inf, 0.0)
    margin = np.log(V[:-1]) - 2.0 * delta_beta * traj.dwell_times - np.log(V[1:])
    j = int(np.argmin(margin))
    return CheckReport("lyapunov_events", bool(margin[j] >= -math.log1p(rel_slack)),
                       float(margin[j]), float(traj.event_times[j + 1]))


@dataclass
class DecayFit:
    observed_delta: float
    C_star: float
    n_samples: int
    floor_flagged: bool
    window: tuple[float, float]


def fit_norm_decay(times, norms, delta: float | None = None) -> tuple[float, float]:
    """``(observed_delta, C_star)`` from samples of ``|z(t)|``.

    ``observed_delta`` is the negated least-squares slope of ``log |z|``;
    ``C_star`` is the smallest constant with ``|z(t)| <= C_star |z(t_0)| e^{-d (t - t_0)}``
    where ``d`` is ``delta`` if given, else the fitted rate.
    """
    t = np.asarray(times, dtype=float)
    nz = np.asarray(norms, dtype=float)
    if t.size < 10:
        raise ValueError("need at least 10 samples")
    if not np.all(nz > 0):
        raise ValueError("all norms must be positive")
    ln = np.log(nz)
    observed = -float(np.polyfit(t - t[0], ln, 1)[0])
    d = observed if delta is None else delta
    C_star = float(np.exp(np.max(ln - ln[0] + d * (t - t[0]))))
    return observed, C_star


def fit_decay(traj: TriggeredTrajectory, window: tuple[float, float] | None = None,
              delta: float | None = None, grid_only: bool = True) -> DecayFit:
    """Fit exponential decay of ``|z(t)|`` over ``window`` (default: whole run).

    Uniform-grid samples are used for the slope (events cluster in time);
    the envelope constant ``C_star`` is checked on every sample.  A run that
    stopped at the state floor is fitted over its pre-floor prefix and flagged.
    """
    t = traj.sample_times
    nz = traj.norms
    lo, hi = window if window is not None else (0.0, float(t[-1]))
    sel = (t >= lo) & (t <= hi) & (nz > 0)
    fit_sel = sel & ~traj.is_event if grid_only else sel
    if np.count_nonzero(fit_sel) < 10:
        fit_sel = sel
    if np.count_nonzero(fit_sel) < 10:
        raise ValueError("need at least 10 positive-norm samples in the window")
    observed, _ = fit_norm_decay(t[fit_sel], nz[fit_sel])
    d = observed if delta is None else delta
    _, C_star = fit_norm_decay(t[sel], nz[sel], d)
    return DecayFit(observed, C_star, int(np.count_nonzero(fit_sel)),
                    traj.halted_reason == "state_floor", (float(lo), float(min(hi, t[-1]))))


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False,
                      default=lambda o: o.item() if hasattr(o, "item") else str(o))
