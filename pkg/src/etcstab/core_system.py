"""Gram-weighted linear control systems.

A system ``z' = A z + B u``, ``y = C z``, ``u = K y`` lives on three finite
dimensional Hilbert spaces (state, input, output), each described by a
symmetric positive definite Gram matrix.  Every computation is carried out in
orthonormalized coordinates ``x = R z`` where ``R^T R = G`` is the Cholesky
factor of the Gram matrix; there skew-adjointness becomes skew-symmetry and
induced operator norms become Euclidean spectral norms.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla

TOL_SKEW = 1e-10
CERT_RESIDUAL_TOL = 1e-8
DEFAULT_MARGIN = 0.05
# cond(P) above this means the certificate overshoot is numerically meaningless
MAX_CERT_CONDITION = 1e14


class InvalidSystem(ValueError):
    """Invalid system data (dimensions, Gram matrices, skew-adjointness)."""


class NotExponentiallyStable(ValueError):
    """Raised when the closed loop has nonnegative spectral abscissa."""

    def __init__(self, spectral_abscissa: float):
        self.spectral_abscissa = float(spectral_abscissa)
        super().__init__(
            f"not exponentially stable: spectral abscissa {self.spectral_abscissa:.6g} >= 0"
        )


class IllConditionedLyapunov(ValueError):
    """Raised when the Lyapunov witness cannot be trusted numerically."""

    def __init__(self, message: str, condition: float):
        self.condition = float(condition)
        super().__init__(f"{message} (condition estimate {self.condition:.3e})")


def _as_matrix(a: Any, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise InvalidSystem(f"{name} must be a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidSystem(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GramSpace:
    """Finite dimensional Hilbert space given by its Gram matrix.

    The Gram matrix is symmetrized on construction and must be positive
    definite.  ``chol`` is the upper triangular factor with
    ``chol.T @ chol == gram``.
    """

    gram: np.ndarray
    name: str = "H"
    chol: np.ndarray = field(init=False, repr=False)
    chol_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = np.array(self.gram, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise InvalidSystem(f"Gram matrix of space {self.name} must be square and nonempty")
        if not np.all(np.isfinite(g)):
            raise InvalidSystem(f"Gram matrix of space {self.name} has non-finite entries")
        asym = np.max(np.abs(g - g.T))
        scale = max(1.0, float(np.max(np.abs(g))))
        if asym > 1e-8 * scale:
            raise InvalidSystem(
                f"Gram matrix of space {self.name} is not symmetric (max asymmetry {asym:.3e})"
            )
        g = 0.5 * (g + g.T)
        try:
            r = sla.cholesky(g, lower=False)
        except np.linalg.LinAlgError as exc:
            raise InvalidSystem(
                f"Gram matrix of space {self.name} is not positive definite"
            ) from exc
        if np.min(np.abs(np.diag(r))) <= 0.0:
            raise InvalidSystem(f"Gram matrix of space {self.name} is singular")
        resid = np.linalg.norm(r.T @ r - g)
        if resid > 1e-10 * np.linalg.norm(g):
            raise InvalidSystem(
                f"Cholesky factor of space {self.name} inaccurate (residual {resid:.3e})"
            )
        r_inv = sla.solve_triangular(r, np.eye(g.shape[0]), lower=False)
        for arr in (g, r, r_inv):
            arr.setflags(write=False)
        object.__setattr__(self, "gram", g)
        object.__setattr__(self, "chol", r)
        object.__setattr__(self, "chol_inv", r_inv)

    @classmethod
    def identity(cls, dim: int, name: str = "H") -> "GramSpace":
        return cls(np.eye(dim), name=name)

    @classmethod
    def scaled_identity(cls, dim: int, weight: float, name: str = "H") -> "GramSpace":
        return cls(weight * np.eye(dim), name=name)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.gram, np.eye(self.dim)))

    def inner(self, x, y) -> float:
        return float(np.asarray(x) @ self.gram @ np.asarray(y))

    def norm(self, x) -> float:
        return float(np.linalg.norm(self.chol @ np.asarray(x, dtype=float)))

    def to_orthonormal(self, x) -> np.ndarray:
        return self.chol @ np.asarray(x, dtype=float)

    def from_orthonormal(self, x) -> np.ndarray:
        return self.chol_inv @ np.asarray(x, dtype=float)


def check_skew_adjoint(A, G: GramSpace) -> float:
    """Relative defect ``||G A + A^T G||_F / max(1, ||G A||_F)``."""
    A = np.asarray(A, dtype=float)
    GA = G.gram @ A
    return float(np.linalg.norm(GA + GA.T) / max(1.0, np.linalg.norm(GA)))


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Linear system ``z' = A z + B u``, ``y = C z`` with feedback gain ``K``.

    ``A`` must be skew-adjoint with respect to the state Gram matrix.  The
    orthonormalized matrices (``At``, ``Bt``, ``Ct``, ``Kt``, ``BKCt``, ...) are
    computed once on construction.
    """

    H: GramSpace
    U: GramSpace
    Y: GramSpace
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    tol_skew: float = TOL_SKEW
    name: str = ""

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        K = _as_matrix(self.K, "K")
        n, m, p = self.H.dim, self.U.dim, self.Y.dim
        for arr, shape, label in ((A, (n, n), "A"), (B, (n, m), "B"),
                                  (C, (p, n), "C"), (K, (m, p), "K")):
            if arr.shape != shape:
                raise InvalidSystem(f"{label} has shape {arr.shape}, expected {shape}")
        for label, arr in (("A", A), ("B", B), ("C", C), ("K", K)):
            object.__setattr__(self, label, arr)
        resid = check_skew_adjoint(A, self.H)
        if resid > self.tol_skew:
            raise InvalidSystem(
                f"A is not skew-adjoint w.r.t. the state Gram matrix (residual {resid:.3e})"
            )
        R, Rinv = self.H.chol, self.H.chol_inv
        At = R @ A @ Rinv
        At = 0.5 * (At - At.T)
        Bt = R @ B @ self.U.chol_inv
        Ct = self.Y.chol @ C @ Rinv
        Kt = self.U.chol @ K @ self.Y.chol_inv
        BKt = Bt @ Kt
        BKCt = BKt @ Ct
        cache = {"At": At, "Bt": Bt, "Ct": Ct, "Kt": Kt, "BKt": BKt, "BKCt": BKCt,
                 "Aclt": At + BKCt}
        for key, val in cache.items():
            val.setflags(write=False)
            object.__setattr__(self, key, val)

    @property
    def n(self) -> int:
        return self.H.dim

    @property
    def m(self) -> int:
        return self.U.dim

    @property
    def p(self) -> int:
        return self.Y.dim

    def with_gain(self, K) -> "ControlSystem":
        return ControlSystem(self.H, self.U, self.Y, self.A, self.B, self.C, K,
                             tol_skew=self.tol_skew, name=self.name)

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "p": self.p,
            "gram_H": self.H.gram.tolist(), "gram_U": self.U.gram.tolist(),
            "gram_Y": self.Y.gram.tolist(),
            "A": self.A.tolist(), "B": self.B.tolist(),
            "C": self.C.tolist(), "K": self.K.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, tol_skew: float = TOL_SKEW) -> "ControlSystem":
        try:
            n, m, p = int(doc["n"]), int(doc["m"]), int(doc["p"])
            mats = {k: doc[k] for k in ("A", "B", "C", "K")}
        except KeyError as exc:
            raise InvalidSystem(f"system document missing key {exc}") from None

        def gram(key, dim, label):
            g = doc.get(key)
            return GramSpace(np.eye(dim) if g is None else np.asarray(g, float), name=label)

        def shaped(key, rows, cols):
            arr = np.asarray(mats[key], dtype=float)
            if arr.size == 0:
                arr = np.zeros((rows, cols))
            return arr

        return cls(gram("gram_H", n, "H"), gram("gram_U", m, "U"), gram("gram_Y", p, "Y"),
                   shaped("A", n, n), shaped("B", n, m), shaped("C", p, n), shaped("K", m, p),
                   tol_skew=tol_skew)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, tol_skew: float = TOL_SKEW) -> "ControlSystem":
        return cls.from_dict(json.loads(text), tol_skew=tol_skew)


def orthonormalize(sys: ControlSystem) -> tuple[np.ndarray, ControlSystem]:
    """Change coordinates so that all three Gram matrices become identities.

    Returns the state transform ``R`` (``x = R z``) and the transformed system.
    """
    sys2 = ControlSystem(
        GramSpace.identity(sys.n, "H"), GramSpace.identity(sys.m, "U"),
        GramSpace.identity(sys.p, "Y"),
        sys.At, sys.Bt, sys.Ct, sys.Kt, tol_skew=sys.tol_skew, name=sys.name,
    )
    return sys.H.chol.copy(), sys2


def closed_loop(sys: ControlSystem) -> np.ndarray:
    """Continuous feedback generator ``A + B K C`` in original coordinates."""
    return sys.A + sys.B @ sys.K @ sys.C


def induced_norm(op, G_in: GramSpace, G_out: GramSpace, return_vector: bool = False):
    """Operator norm of ``op`` from ``(R^n, G_in)`` to ``(R^m, G_out)``.

    With ``return_vector=True`` also returns a unit maximizing vector (in the
    ``G_in`` norm), expressed in original coordinates.
    """
    op = np.asarray(op, dtype=float)
    opt = G_out.chol @ op @ G_in.chol_inv
    if opt.size == 0:
        val, v = 0.0, np.zeros(G_in.dim)
        if G_in.dim:
            v[0] = 1.0
    else:
        _, s, vt = np.linalg.svd(opt)
        val = float(s[0])
        v = vt[0]
    if not return_vector:
        return val
    return val, G_in.from_orthonormal(v)


def _ortho_matrix(A_cl, G: GramSpace) -> np.ndarray:
    return G.chol @ np.asarray(A_cl, dtype=float) @ G.chol_inv


def compute_c1(A_cl, G: GramSpace) -> float:
    """Smallest ``c1 >= 0`` with ``<z, A_cl z>_G <= c1 ||z||_G^2``.

    Values at rounding level relative to ``||A_cl||`` are reported as 0, so
    dissipative feedback of a skew generator gives exactly ``c1 = 0``.
    """
    At = _ortho_matrix(A_cl, G)
    sym = 0.5 * (At + At.T)
    top = float(np.linalg.eigvalsh(sym)[-1])
    scale = max(1.0, float(np.abs(At).max())) * At.shape[0]
    return top if top > 64 * np.finfo(float).eps * scale else 0.0


def spectral_abscissa(M) -> float:
    return float(np.max(np.linalg.eigvals(np.asarray(M, dtype=float)).real))


def solve_shifted_lyapunov(At, shift: float) -> np.ndarray:
    """Symmetric solution ``P`` of ``(At + s I)^T P + P (At + s I) = -I``."""
    n = At.shape[0]
    F = At + shift * np.eye(n)
    P = sla.solve_continuous_lyapunov(F.T, -np.eye(n))
    return 0.5 * (P + P.T)


def lyapunov_residual(At, shift: float, P) -> float:
    n = At.shape[0]
    F = At + shift * np.eye(n)
    return float(np.linalg.norm(F.T @ P + P @ F + np.eye(n)))


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    """Decay rate ``alpha`` and overshoot ``M`` with ``||e^{t A_cl}|| <= M e^{-alpha t}``.

    ``P`` is the Lyapunov witness in orthonormalized coordinates.
    """

    alpha: float
    M: float
    P: np.ndarray = field(repr=False)
    margin: float = DEFAULT_MARGIN
    spectral_abscissa: float = float("nan")

    def bound(self, t) -> np.ndarray:
        return self.M * np.exp(-self.alpha * np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "M": self.M, "margin": self.margin,
                "spectral_abscissa": self.spectral_abscissa}


def certify_stability(A_cl, G: GramSpace, margin: float = DEFAULT_MARGIN,
                      residual_tol: float = CERT_RESIDUAL_TOL) -> StabilityCertificate:
    """Exponential stability certificate ``(alpha, M)`` for ``A_cl``.

    ``alpha`` is the spectral abscissa shrunk by ``margin``; ``M`` is
    ``sqrt(cond(P))`` for the witness ``P`` of the shifted Lyapunov equation,
    which bounds the transient of ``e^{t A_cl}`` in the ``G`` norm.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    At = _ortho_matrix(A_cl, G)
    sigma = spectral_abscissa(At)
    if not sigma < 0.0:
        raise NotExponentiallyStable(sigma)
    alpha = -sigma * (1.0 - margin)
    P = solve_shifted_lyapunov(At, alpha)
    evals = np.linalg.eigvalsh(P)
    lo, hi = float(evals[0]), float(evals[-1])
    if not lo > 0.0:
        raise IllConditionedLyapunov("Lyapunov witness is not positive definite",
                                     math.inf if lo <= 0 else hi / lo)
    cond = hi / lo
    if cond > MAX_CERT_CONDITION:
        raise IllConditionedLyapunov("Lyapunov witness too ill-conditioned", cond)
    resid = lyapunov_residual(At, alpha, P)
    if resid > residual_tol * max(1.0, np.linalg.norm(P)) * At.shape[0]:
        raise IllConditionedLyapunov(
            f"Lyapunov residual {resid:.3e} exceeds tolerance", cond)
    P.setflags(write=False)
    return StabilityCertificate(alpha=alpha, M=math.sqrt(cond), P=P, margin=margin,
                                spectral_abscissa=sigma)


def certify_system(sys: ControlSystem, margin: float = DEFAULT_MARGIN) -> StabilityCertificate:
    """Certificate for the continuous closed loop of ``sys``."""
    return certify_stability(sys.Aclt, GramSpace.identity(sys.n), margin=margin)


def norm_BKC(sys: ControlSystem) -> float:
    return float(np.linalg.norm(sys.BKCt, 2)) if sys.BKCt.size else 0.0


def norm_BK(sys: ControlSystem) -> float:
    return float(np.linalg.norm(sys.BKt, 2)) if sys.BKt.size else 0.0


def norm_C(sys: ControlSystem) -> float:
    return float(np.linalg.norm(sys.Ct, 2)) if sys.Ct.size else 0.0


def kappa(sys: ControlSystem, gamma: float) -> float:
    """Growth/decay rate bounding the triggered loop: ``||BKC|| + gamma ||BK||``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return norm_BKC(sys) + gamma * norm_BK(sys)
