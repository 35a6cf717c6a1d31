"""Example systems: damped transport family, 1-d damped wave, periodic linear KdV.

Each builder returns a validated :class:`~etcstab.core_system.ControlSystem`
whose uncontrolled generator is skew-adjoint for the model's natural energy
inner product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Union

import numpy as np

from .core_system import ControlSystem, GramSpace, InvalidSystem

KDV_QUADRATURE_POINTS = 2048
G_MASS_TOL = 1e-10


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportSpec:
    nx: int = 63
    velocities: tuple = (1.0,)
    omega: tuple = (0.0, 0.5)
    gain: float = 1.0

    variant = "transport"

    def __post_init__(self):
        object.__setattr__(self, "velocities", tuple(float(v) for v in self.velocities))
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if not self.velocities:
            raise InvalidSystem("transport needs at least one velocity")
        if any(not (math.isfinite(v) and v >= 1.0) for v in self.velocities):
            raise InvalidSystem(f"velocities must be finite and >= 1, got {self.velocities}")
        _check_interval(self.omega, 0.0, 1.0)

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.nx) / self.nx


@dataclass(frozen=True)
class WaveSpec:
    nx: int = 63
    potential: Union[float, tuple] = 0.0
    omega: tuple = (0.0, 0.5)
    gain: float = 1.0

    variant = "wave"

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if not isinstance(self.potential, (int, float)):
            object.__setattr__(self, "potential", tuple(float(p) for p in self.potential))
        _check_interval(self.omega, 0.0, 1.0)

    @property
    def h(self) -> float:
        return 1.0 / (self.nx + 1)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.nx + 1) * self.h

    def potential_values(self) -> np.ndarray:
        if isinstance(self.potential, (int, float)):
            return np.full(self.nx, float(self.potential))
        p = np.asarray(self.potential, dtype=float)
        if p.shape != (self.nx,):
            raise InvalidSystem(f"potential must have {self.nx} samples, got {p.shape}")
        return p


@dataclass(frozen=True)
class KdVSpec:
    n_modes: int = 8
    support: tuple = (0.5 * math.pi, 1.5 * math.pi)
    g_samples: Union[tuple, None] = None
    gain: float = 1.0
    full: bool = False

    variant = "kdv"

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        if self.g_samples is not None:
            object.__setattr__(self, "g_samples", tuple(float(g) for g in self.g_samples))


@dataclass(frozen=True)
class RandomSkewSpec:
    n: int = 6
    m: int = 1
    seed: int = 0
    gain: float = 1.0

    variant = "random_skew"


@dataclass(frozen=True)
class ScalarSpec:
    gain: float = 1.0

    variant = "scalar"


ModelSpec = Union[TransportSpec, WaveSpec, KdVSpec, RandomSkewSpec, ScalarSpec]

_SPEC_TYPES = {cls.variant: cls for cls in
               (TransportSpec, WaveSpec, KdVSpec, RandomSkewSpec, ScalarSpec)}


def spec_from_dict(doc: dict) -> ModelSpec:
    """Build a model spec from ``{"variant": ..., **params}``."""
    doc = dict(doc)
    variant = doc.pop("variant", None)
    if variant not in _SPEC_TYPES:
        raise InvalidSystem(f"unknown model variant {variant!r}; expected one of {sorted(_SPEC_TYPES)}")
    cls = _SPEC_TYPES[variant]
    for key in ("velocities", "omega", "support", "g_samples", "potential"):
        if isinstance(doc.get(key), list):
            doc[key] = tuple(doc[key])
    try:
        return cls(**doc)
    except TypeError as exc:
        raise InvalidSystem(f"bad parameters for {variant}: {exc}") from None


def spec_to_dict(spec: ModelSpec) -> dict:
    out = {"variant": spec.variant}
    for f in spec.__dataclass_fields__:
        val = getattr(spec, f)
        out[f] = list(val) if isinstance(val, tuple) else val
    return out


def build_model(spec: ModelSpec) -> ControlSystem:
    builders = {"transport": build_transport, "wave": build_wave1d, "kdv": build_kdv,
                "random_skew": build_random_skew, "scalar": build_scalar}
    return builders[spec.variant](spec)


def _check_interval(omega, lo, hi):
    if len(omega) != 2:
        raise InvalidSystem(f"omega must be an interval (a, b), got {omega}")
    a, b = omega
    if not (lo <= a < b <= hi):
        raise InvalidSystem(f"omega must be a nonempty open interval inside ({lo}, {hi}), got {omega}")


def _indicator(x: np.ndarray, omega) -> np.ndarray:
    a, b = omega
    return ((x > a) & (x < b)).astype(float)


def cell_weights(nx: int, omega) -> np.ndarray:
    """Fraction of each periodic cell ``[x_j - h/2, x_j + h/2]`` covered by ``omega``.

    These are the quadrature weights of ``1_omega`` on the grid; they sum to
    ``nx * |omega|`` exactly, unlike plain nodal sampling of the indicator.
    """
    a, b = omega
    h = 1.0 / nx
    x = np.arange(nx) * h
    w = np.zeros(nx)
    for shift in (-1.0, 0.0, 1.0):
        w += np.clip(np.minimum(x + h / 2, b + shift) - np.maximum(x - h / 2, a + shift), 0.0, None)
    return np.clip(w / h, 0.0, 1.0)


# ---------------------------------------------------------------------------
# periodic transport family
# ---------------------------------------------------------------------------

def fourier_diff_matrix(n: int, length: float = 1.0) -> np.ndarray:
    """First-derivative Fourier collocation matrix on ``n`` equispaced points.

    Only odd ``n`` is accepted: the matrix is then exactly skew-symmetric and
    differentiates every trigonometric polynomial of degree ``(n-1)/2``.
    """
    if n < 3 or n % 2 == 0:
        raise InvalidSystem(f"Fourier differentiation needs an odd grid size >= 3, got {n}")
    k = np.arange(n)
    diff = k[:, None] - k[None, :]
    D = np.zeros((n, n))
    off = diff != 0
    sign = np.where(diff % 2 == 0, 1.0, -1.0)
    D[off] = (math.pi / length) * sign[off] / np.sin(math.pi * diff[off] / n)
    return D


def build_transport(spec: TransportSpec) -> ControlSystem:
    """Transport family ``f_t + v f_x + 1_omega f = 0`` on the periodic unit interval."""
    if spec.nx % 2 == 0:
        raise InvalidSystem(f"transport grid size must be odd, got nx={spec.nx}")
    D = fourier_diff_matrix(spec.nx)
    nv = len(spec.velocities)
    n = spec.nx * nv
    A = np.zeros((n, n))
    for j, v in enumerate(spec.velocities):
        sl = slice(j * spec.nx, (j + 1) * spec.nx)
        A[sl, sl] = -v * D
    # B = C = sqrt(W) so the closed-loop damping B K C is -gain * W exactly
    chi = np.tile(cell_weights(spec.nx, spec.omega), nv)
    B = np.diag(np.sqrt(chi))
    gram = GramSpace.scaled_identity(n, spec.h, "H")
    return ControlSystem(gram, GramSpace.scaled_identity(n, spec.h, "U"),
                         GramSpace.scaled_identity(n, spec.h, "Y"),
                         A, B, B.copy(), -spec.gain * np.eye(n), name="transport")


def _fraction_in(y, a, b):
    """Measure of ``{s in [0, y] : frac(s) in (a, b)}`` for ``y >= 0``."""
    y = np.asarray(y, dtype=float)
    whole = np.floor(y)
    return whole * (b - a) + np.clip(y - whole - a, 0.0, b - a)


def occupation_time(x0, v: float, t: float, omega) -> np.ndarray:
    """Time spent in ``omega`` by the characteristic ``s -> {x0 + s v}``, ``s in [0, t]``."""
    a, b = omega
    y0 = np.mod(np.asarray(x0, dtype=float), 1.0)
    return (_fraction_in(y0 + v * t, a, b) - _fraction_in(y0, a, b)) / v


def trig_interpolate(values, x, length: float = 1.0) -> np.ndarray:
    """Evaluate the trigonometric interpolant of equispaced samples at ``x``."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n % 2 == 0:
        raise ValueError("trigonometric interpolation implemented for odd sample counts")
    coef = np.fft.fft(values) / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    phase = np.exp(2j * math.pi * np.outer(np.asarray(x, dtype=float) / length, k))
    return (phase @ coef).real


def transport_exact(spec: TransportSpec, f0, t: float) -> np.ndarray:
    """Closed-loop transport solution by characteristics, sampled on the grid.

    ``f0`` is either a callable ``f0(x, v)`` or grid samples of shape
    ``(len(velocities), nx)`` (or the flattened state); grid samples are
    evaluated off-grid through their trigonometric interpolant.
    Returns an array shaped like the flattened state.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = spec.grid
    nv = len(spec.velocities)
    if not callable(f0):
        f0 = np.asarray(f0, dtype=float).reshape(nv, spec.nx)
    out = np.empty((nv, spec.nx))
    for j, v in enumerate(spec.velocities):
        foot = np.mod(x - v * t, 1.0)
        base = f0(foot, v) if callable(f0) else trig_interpolate(f0[j], foot)
        out[j] = base * np.exp(-spec.gain * occupation_time(foot, v, t, spec.omega))
    return out.ravel()


class Counterexample(NamedTuple):
    f0: np.ndarray
    v1: float
    k_star: int
    spec: TransportSpec
    period: float


def counterexample_velocity(period: float) -> float:
    """Velocity whose characteristic returns to its start at every sampling time."""
    if not period > 0:
        raise ValueError("sampling period must be positive")
    return max(1, math.ceil(period - 1e-12)) / period


def counterexample_f0(spec: TransportSpec, period: float, *, overshoot: float = math.exp(0.5),
                      rate: float = 0.5, half_width_cells: int = 3) -> Counterexample:
    """Initial datum invisible to periodic sampling with period ``period``.

    A smooth bump centered at 3/4 on the single velocity ``v1`` (inserted into
    the velocity list) so that at every sampling time ``k * period`` the data
    sit outside ``omega``.  ``k_star`` is the first sampling index at which a
    hypothetical bound ``overshoot * exp(-rate t)`` would drop to 1/2.
    """
    v1 = counterexample_velocity(period)
    vel = list(spec.velocities)
    if not any(abs(v - v1) <= 1e-12 * v1 for v in vel):
        vel.append(v1)
    spec = replace(spec, velocities=tuple(vel))
    j1 = next(i for i, v in enumerate(spec.velocities) if abs(v - v1) <= 1e-12 * v1)
    half = half_width_cells * spec.h
    a, b = spec.omega
    center = 0.75
    k_star = max(1, math.ceil(math.log(2.0 * overshoot) / (rate * period)))
    x = spec.grid
    dist = np.abs((x - center + 0.5) % 1.0 - 0.5)
    bump = np.where(dist < half, np.cos(0.5 * math.pi * dist / half) ** 2, 0.0)
    if np.count_nonzero(bump) == 0:
        raise InvalidSystem("counterexample bump has no grid support; use a finer nx")
    # v1 * period is an integer, so the discrete flow returns the bump to the
    # same nodes at every sampling time; it must sit where the damping weight vanishes
    lo, hi = center - half, center + half
    if (lo <= b and hi >= a) or np.any(bump * cell_weights(spec.nx, spec.omega) > 0):
        raise InvalidSystem("counterexample bump cannot avoid omega at this resolution; use a finer nx")
    f0 = np.zeros((len(spec.velocities), spec.nx))
    f0[j1] = bump
    return Counterexample(f0.ravel(), v1, k_star, spec, float(period))


# ---------------------------------------------------------------------------
# 1-d damped wave equation
# ---------------------------------------------------------------------------

def build_wave1d(spec: WaveSpec) -> ControlSystem:
    """Damped wave ``w_tt - w_xx + p w = -k 1_omega w_t`` with Dirichlet ends.

    State ``(w, w_t)`` on interior nodes; the energy Gram matrix
    ``blockdiag(L_h + P_h, h I)`` makes the semi-discrete generator
    skew-adjoint exactly.
    """
    nx, h = spec.nx, spec.h
    if nx < 3:
        raise InvalidSystem("wave model needs at least 3 interior nodes")
    p = spec.potential_values()
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidSystem("wave potential must be finite and nonnegative")
    lap = (np.diag(-2.0 * np.ones(nx)) + np.diag(np.ones(nx - 1), 1)
           + np.diag(np.ones(nx - 1), -1)) / h**2
    stiff = h * (-lap + np.diag(p))
    I = np.eye(nx)
    Z = np.zeros((nx, nx))
    A = np.block([[Z, I], [lap - np.diag(p), Z]])
    gram_H = np.block([[stiff, Z], [Z, h * I]])
    chi = _indicator(spec.grid, spec.omega)
    if not chi.any():
        raise InvalidSystem("omega contains no interior wave node; refine nx")
    B = np.vstack([Z, np.diag(chi)])
    C = B.T.copy()
    return ControlSystem(GramSpace(gram_H, "H"), GramSpace.scaled_identity(nx, h, "U"),
                         GramSpace.scaled_identity(nx, h, "Y"),
                         A, B, C, -spec.gain * I, name="wave")


def wave_energy(spec: WaveSpec, z) -> float:
    """Discrete energy ``(w^T (L_h + P_h) w + h |w_t|^2) / 2``."""
    nx, h = spec.nx, spec.h
    z = np.asarray(z, dtype=float)
    w, wt = z[:nx], z[nx:]
    lap = (np.diag(-2.0 * np.ones(nx)) + np.diag(np.ones(nx - 1), 1)
           + np.diag(np.ones(nx - 1), -1)) / h**2
    stiff = h * (-lap + np.diag(spec.potential_values()))
    return 0.5 * float(w @ stiff @ w + h * wt @ wt)


# ---------------------------------------------------------------------------
# periodic linear KdV
# ---------------------------------------------------------------------------

def kdv_quadrature(nq: int = KDV_QUADRATURE_POINTS):
    x = 2.0 * math.pi * np.arange(nq) / nq
    return x, 2.0 * math.pi / nq


def bump_profile(support, nq: int = KDV_QUADRATURE_POINTS) -> np.ndarray:
    """Smooth nonnegative bump supported in ``support``, unit mass on the quadrature grid."""
    a, b = support
    if not (0.0 <= a < b <= 2.0 * math.pi):
        raise InvalidSystem(f"g support must satisfy 0 <= a < b <= 2 pi, got {support}")
    x, w = kdv_quadrature(nq)
    s = (x - a) / (b - a)
    inside = (s > 0) & (s < 1)
    g = np.zeros_like(x)
    g[inside] = np.exp(-1.0 / (s[inside] * (1.0 - s[inside])))
    return g / (w * g.sum())


def kdv_basis(n_modes: int, x: np.ndarray, full: bool = False) -> np.ndarray:
    """L2-orthonormal real Fourier basis evaluated at ``x``; rows are basis functions."""
    rows = []
    if full:
        rows.append(np.full_like(x, 1.0 / math.sqrt(2.0 * math.pi)))
    for k in range(1, n_modes + 1):
        rows.append(np.cos(k * x) / math.sqrt(math.pi))
        rows.append(np.sin(k * x) / math.sqrt(math.pi))
    return np.array(rows)


def kdv_g_values(spec: KdVSpec) -> np.ndarray:
    if spec.g_samples is None:
        return bump_profile(spec.support)
    g = np.asarray(spec.g_samples, dtype=float)
    _, w = kdv_quadrature(g.size)
    if np.any(g < 0):
        raise InvalidSystem("g must be nonnegative")
    mass = w * g.sum()
    if abs(mass - 1.0) > G_MASS_TOL:
        raise InvalidSystem(f"g must have unit mass, got {mass!r}")
    return g


def kdv_G_matrix(spec: KdVSpec) -> np.ndarray:
    """Galerkin matrix of ``G u = g (u - int g u)`` in the orthonormal Fourier basis."""
    g = kdv_g_values(spec)
    x, w = kdv_quadrature(g.size)
    if g.size < 4 * spec.n_modes + 2:
        raise InvalidSystem("g quadrature too coarse for the requested number of modes")
    phi = kdv_basis(spec.n_modes, x, full=spec.full)
    moments = w * phi @ g
    G = w * (phi * g) @ phi.T - np.outer(moments, moments)
    return 0.5 * (G + G.T)


def kdv_generator(n_modes: int, full: bool = False) -> np.ndarray:
    """``-d^3/dx^3`` on the real Fourier basis (cos, sin pairs per wavenumber)."""
    n = 2 * n_modes + (1 if full else 0)
    A = np.zeros((n, n))
    off = 1 if full else 0
    for k in range(1, n_modes + 1):
        i = off + 2 * (k - 1)
        A[i, i + 1] = k**3
        A[i + 1, i] = -(k**3)
    return A


def build_kdv(spec: KdVSpec) -> ControlSystem:
    """Linear KdV ``u_t + u_xxx = -k G u`` on the periodic interval (0, 2 pi).

    The state holds the L2-orthonormal Fourier coefficients of ``u``; unless
    ``spec.full`` the mean mode is dropped (the mass-free reduction).  The
    factorization is ``B = I``, ``K = -k I``, ``C = G``.
    """
    if spec.n_modes < 2 and not spec.full:
        raise InvalidSystem("KdV model needs n_modes >= 2")
    G = kdv_G_matrix(spec)
    A = kdv_generator(spec.n_modes, spec.full)
    n = A.shape[0]
    I = GramSpace.identity(n, "H")
    return ControlSystem(I, GramSpace.identity(n, "U"), GramSpace.identity(n, "Y"),
                         A, np.eye(n), G, -spec.gain * np.eye(n), name="kdv")


def kdv_mass(u, *, coefficients: bool = False) -> float:
    """Total mass ``int_0^{2 pi} u dx``.

    ``u`` holds equispaced samples on [0, 2 pi) by default; with
    ``coefficients=True`` it is a full-space coefficient vector whose first
    entry is the orthonormal mean-mode coefficient.
    """
    u = np.asarray(u, dtype=float)
    if coefficients:
        return float(u[0] * math.sqrt(2.0 * math.pi))
    return float(2.0 * math.pi * u.mean())


def kdv_synthesize(spec: KdVSpec, coeffs, x) -> np.ndarray:
    """Function values at ``x`` from a coefficient vector."""
    return np.asarray(coeffs, dtype=float) @ kdv_basis(spec.n_modes, np.asarray(x, float), spec.full)


# ---------------------------------------------------------------------------
# random skew systems and the scalar toy loop
# ---------------------------------------------------------------------------

def build_random_skew(spec: RandomSkewSpec, max_attempts: int = 50) -> ControlSystem:
    """Seeded random skew-symmetric plant with collocated damping ``-gain * B B^T``."""
    if spec.n < 2:
        raise InvalidSystem("random skew model needs n >= 2")
    rng = np.random.default_rng(spec.seed)
    for _ in range(max_attempts):
        S = rng.standard_normal((spec.n, spec.n))
        A = S - S.T
        B = rng.standard_normal((spec.n, spec.m))
        B /= max(1.0, np.linalg.norm(B, 2))
        if spec.gain <= 0:
            break
        Acl = A - spec.gain * B @ B.T
        if np.max(np.linalg.eigvals(Acl).real) < 0:
            break
    else:
        raise InvalidSystem(f"no stabilizable random system after {max_attempts} draws (seed {spec.seed})")
    n, m = spec.n, spec.m
    return ControlSystem(GramSpace.identity(n, "H"), GramSpace.identity(m, "U"),
                         GramSpace.identity(m, "Y"), A, B, B.T.copy(),
                         -spec.gain * np.eye(m), name="random_skew")


def build_scalar(spec: ScalarSpec) -> ControlSystem:
    """``z' = u``, ``u = -k z``: the one-dimensional toy loop."""
    one = GramSpace.identity(1)
    return ControlSystem(one, GramSpace.identity(1, "U"), GramSpace.identity(1, "Y"),
                         [[0.0]], [[1.0]], [[1.0]], [[-spec.gain]], name="scalar")


def builtin_initial_state(spec: ModelSpec) -> np.ndarray:
    """Smooth default initial datum for each model."""
    if spec.variant == "transport":
        x = spec.grid
        prof = np.exp(np.cos(2 * math.pi * x)) * (1.0 + 0.5 * np.sin(4 * math.pi * x))
        return np.tile(prof, len(spec.velocities))
    if spec.variant == "wave":
        x = spec.grid
        w = np.sin(math.pi * x) + 0.5 * np.sin(2 * math.pi * x)
        wt = np.sin(3 * math.pi * x)
        return np.concatenate([w, wt])
    if spec.variant == "kdv":
        n = 2 * spec.n_modes + (1 if spec.full else 0)
        z = np.zeros(n)
        off = 1 if spec.full else 0
        if spec.full:
            z[0] = 1.0
        for k in range(1, spec.n_modes + 1):
            z[off + 2 * (k - 1)] = 1.0 / k**2
            z[off + 2 * (k - 1) + 1] = 0.5 / k**2
        return z
    if spec.variant == "random_skew":
        return np.random.default_rng(spec.seed + 1).standard_normal(spec.n)
    return np.ones(1)
