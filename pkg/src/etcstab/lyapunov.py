"""Lyapunov functional of the continuous closed loop and trigger design bounds.

For ``beta`` in ``(0, alpha)`` and ``eta >= 0`` the functional is::

    V(z) = |z|^2 / 2 + eta * int_0^inf exp(2 beta s) |exp(s A_cl) z|^2 ds
         = |x|^2 / 2 + eta * x^T Q x,            x = R z,

where ``Q`` solves ``(At + beta I)^T Q + Q (At + beta I) = -I``.  The integral
form is kept as an independent cross-check (:func:`quadrature_oracle`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core_system import (ControlSystem, GramSpace, StabilityCertificate, compute_c1,
                          lyapunov_residual, norm_BK, norm_BKC, solve_shifted_lyapunov)

LYAP_RESIDUAL_TOL = 1e-8
BETA_SCAN_POINTS = 64


@dataclass(frozen=True, eq=False)
class LyapunovFunctional:
    beta: float
    eta: float
    Q: np.ndarray = field(repr=False)
    C0: float
    C1: float
    C2: float
    cert: StabilityCertificate = field(repr=False)
    c1: float
    sys: ControlSystem = field(repr=False)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "eta": self.eta, "C0": self.C0, "C1": self.C1,
                "C2": self.C2, "Q": self.Q.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def lyapunov_constants(c1: float, beta: float, eta: float, alpha: float, M: float):
    """``(C0, C1, C2)`` for the functional with weight ``eta``."""
    C0 = 2.0 * math.sqrt(1.0 + eta * M**2)
    C1 = 0.5
    C2 = 0.5 * (1.0 + eta * M**2 / (alpha - beta))
    return C0, C1, C2


def build_lyapunov(sys: ControlSystem, cert: StabilityCertificate, beta: float,
                   eta: float | None = None, *, allow_small_eta: bool = False) -> LyapunovFunctional:
    """Assemble ``V`` for the closed loop of ``sys``.

    ``eta`` defaults to ``c1 + beta``.  Smaller values void the decay property
    and are refused unless ``allow_small_eta`` is set.
    """
    if not 0.0 < beta < cert.alpha:
        raise ValueError(f"beta out of range: need 0 < beta < alpha = {cert.alpha:.6g}, got {beta}")
    c1 = compute_c1(sys.Aclt, GramSpace.identity(sys.n))
    if eta is None:
        eta = c1 + beta
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if eta < c1 + beta and not allow_small_eta:
        raise ValueError(
            f"eta too small for decay property (ii): need eta >= c1 + beta = {c1 + beta:.6g}")
    Q = solve_shifted_lyapunov(sys.Aclt, beta)
    n = sys.n
    resid = lyapunov_residual(sys.Aclt, beta, Q)
    if resid > LYAP_RESIDUAL_TOL * n * max(1.0, np.linalg.norm(Q)):
        raise ArithmeticError(f"Lyapunov solve inaccurate (residual {resid:.3e})")
    Q.setflags(write=False)
    C0, C1, C2 = lyapunov_constants(c1, beta, eta, cert.alpha, cert.M)
    return LyapunovFunctional(beta=float(beta), eta=float(eta), Q=Q, C0=C0, C1=C1, C2=C2,
                              cert=cert, c1=c1, sys=sys)


def lyap_value(F: LyapunovFunctional, z) -> float:
    x = F.sys.H.to_orthonormal(z)
    return float(0.5 * x @ x + F.eta * x @ F.Q @ x)


def lyap_values(F: LyapunovFunctional, X) -> np.ndarray:
    """``V`` for each column of ``X``, given in orthonormalized coordinates."""
    X = np.asarray(X, dtype=float)
    return 0.5 * np.sum(X * X, axis=0) + F.eta * np.sum(X * (F.Q @ X), axis=0)


def lyap_gradient(F: LyapunovFunctional, z) -> np.ndarray:
    """Riesz representative of ``dV(z)`` in the state inner product."""
    x = F.sys.H.to_orthonormal(z)
    return F.sys.H.from_orthonormal(x + 2.0 * F.eta * (F.Q @ x))


# ---------------------------------------------------------------------------
# integral cross-check
# ---------------------------------------------------------------------------

class QuadratureError(ArithmeticError):
    def __init__(self, message: str, achieved: float):
        self.achieved = achieved
        super().__init__(f"{message} (achieved accuracy {achieved:.3e})")


def quadrature_oracle(sys: ControlSystem, cert: StabilityCertificate, beta: float, eta: float,
                      z, tail_tol: float = 1e-10, *, order: int = 16,
                      max_panels: int = 1 << 18):
    """``V(z)`` by direct quadrature of the exponentially weighted flow energy.

    The flow is truncated at ``T_cut`` where the certified bound
    ``M exp(-alpha t)`` makes the neglected tail at most ``tail_tol |z|^2``;
    ``[0, T_cut]`` is covered by composite Gauss-Legendre panels, halved until
    two successive refinements agree to ``tail_tol |z|^2``.  ``z`` may be a
    single state or a matrix whose columns are states.
    """
    if not beta < cert.alpha:
        raise ValueError("beta must be below the certified decay rate")
    if not tail_tol > 0:
        raise ValueError("tail_tol must be positive")
    Z = np.asarray(z, dtype=float)
    single = Z.ndim == 1
    X = sys.H.chol @ (Z[:, None] if single else Z)
    sq = np.sum(X * X, axis=0)
    base = 0.5 * sq
    if eta == 0 or not np.any(sq > 0):
        return float(base[0]) if single else base
    gap = cert.alpha - beta
    T = max(0.0, math.log(eta * cert.M**2 / (2.0 * gap * tail_tol)) / (2.0 * gap))
    At = sys.Aclt
    scale = max(1.0, float(np.linalg.norm(At, 2)))
    panels = max(8, int(math.ceil(T * scale / 4.0)))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    prev = None
    while True:
        L = T / panels
        tau = 0.5 * L * (nodes + 1.0)
        w = 0.5 * L * weights
        step = sla.expm(L * At)
        inner = np.vstack([sla.expm(t * At) for t in tau])
        n = At.shape[0]
        Y = X.copy()
        acc = np.zeros(X.shape[1])
        for j in range(panels):
            s0 = j * L
            V = (inner @ Y).reshape(order, n, -1)
            acc += np.einsum("k,kn->n", w * np.exp(2.0 * beta * (s0 + tau)),
                             np.sum(V * V, axis=1))
            Y = step @ Y
        if prev is not None:
            err = float(np.max(eta * np.abs(acc - prev) / sq))
            if err <= tail_tol:
                break
        if 2 * panels > max_panels:
            achieved = float("inf") if prev is None else err
            raise QuadratureError("quadrature refinement did not converge", achieved)
        prev = acc
        panels *= 2
    out = base + eta * acc
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# trigger design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriggerDesign:
    """Admissible trigger ratios and guaranteed decay rates for a certificate.

    ``gamma_max`` is ``inf`` when the radius vanishes (no actuation), meaning
    any ratio is admissible.
    """

    r: float
    gamma_max: float
    alpha: float
    M: float
    c1: float
    norm_BK: float
    norm_BKC: float

    @property
    def unconstrained(self) -> bool:
        return self.r == 0.0

    def delta_max(self, gamma: float) -> float:
        return self.alpha - gamma * self.r

    def delta_beta(self, beta: float, gamma: float) -> float:
        return beta - gamma * math.sqrt(2.0 * (1.0 + (self.c1 + beta) * self.M**2)) * self.norm_BK

    def delta_tilde(self, beta: float, gamma: float) -> float:
        return beta - gamma * self.r

    def beta_star(self, gamma: float, delta: float) -> float:
        """A ``beta`` in ``(0, alpha)`` with ``delta_tilde(beta) > delta``.

        The admissible set is the open interval ``(delta + gamma r, alpha)``;
        an evenly spaced interior grid is scanned and the point with the
        largest guaranteed rate ``delta_beta`` is kept.
        """
        if not 0 < delta < self.delta_max(gamma):
            raise ValueError(
                f"need 0 < delta < alpha - gamma r = {self.delta_max(gamma):.6g}, got {delta}")
        grid = np.linspace(delta + gamma * self.r, self.alpha, BETA_SCAN_POINTS + 2)[1:-1]
        ok = [b for b in grid if self.delta_tilde(b, gamma) > delta and b < self.alpha]
        if not ok:
            raise ValueError("no admissible beta found on the scan grid")
        return float(max(ok, key=lambda b: self.delta_beta(b, gamma)))

    def to_dict(self) -> dict:
        return {"r": self.r, "gamma_max": None if math.isinf(self.gamma_max) else self.gamma_max,
                "alpha": self.alpha, "M": self.M, "c1": self.c1}


def trigger_bound(sys: ControlSystem, cert: StabilityCertificate) -> TriggerDesign:
    """Radius ``r = ||BK|| sqrt(2 (1 + (||BKC|| + alpha) M^2))`` and ``gamma_max = alpha / r``."""
    nbk, nbkc = norm_BK(sys), norm_BKC(sys)
    r = nbk * math.sqrt(2.0 * (1.0 + (nbkc + cert.alpha) * cert.M**2))
    gamma_max = math.inf if r == 0.0 else cert.alpha / r
    c1 = compute_c1(sys.Aclt, GramSpace.identity(sys.n))
    return TriggerDesign(r=r, gamma_max=gamma_max, alpha=cert.alpha, M=cert.M, c1=c1,
                         norm_BK=nbk, norm_BKC=nbkc)


def decay_rate(F: LyapunovFunctional, gamma: float) -> tuple[float, float]:
    """Guaranteed rate ``delta_beta`` and its lower bound ``delta_tilde_beta``."""
    design = trigger_bound(F.sys, F.cert)
    design = TriggerDesign(**{**design.__dict__, "c1": F.c1})
    return design.delta_beta(F.beta, gamma), design.delta_tilde(F.beta, gamma)
