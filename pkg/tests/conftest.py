"""Shared fixtures: small instances of every model with their certificates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import settings

from etcstab.core_system import ControlSystem, StabilityCertificate, certify_system
from etcstab.lyapunov import LyapunovFunctional, TriggerDesign, build_lyapunov, trigger_bound
from etcstab.models import (KdVSpec, RandomSkewSpec, ScalarSpec, TransportSpec, WaveSpec,
                            build_model)

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

# sizes used throughout the suite; larger grids only where a check names them
MODEL_SPECS = {
    "transport": TransportSpec(nx=31),
    "wave": WaveSpec(nx=15),
    "kdv": KdVSpec(n_modes=3),
    "random": RandomSkewSpec(n=6, m=2, seed=3),
    "scalar": ScalarSpec(),
}


@dataclass
class Case:
    name: str
    spec: object
    sys: ControlSystem
    cert: StabilityCertificate
    design: TriggerDesign
    F: LyapunovFunctional


_cache: dict[str, Case] = {}


def make_case(name: str) -> Case:
    if name not in _cache:
        spec = MODEL_SPECS[name]
        sys = build_model(spec)
        cert = certify_system(sys)
        F = build_lyapunov(sys, cert, 0.5 * cert.alpha)
        _cache[name] = Case(name, spec, sys, cert, trigger_bound(sys, cert), F)
    return _cache[name]


@pytest.fixture(params=sorted(MODEL_SPECS))
def case(request) -> Case:
    return make_case(request.param)


@pytest.fixture
def scalar() -> ControlSystem:
    return build_model(ScalarSpec())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def random_states(sys: ControlSystem, count: int, rng) -> np.ndarray:
    """Columns of random states in original coordinates."""
    return sys.H.chol_inv @ rng.standard_normal((sys.n, count))


# acceptance reporting: one PASS/FAIL line per criterion, repeated in the summary
ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Recorder ``record(number, ok, detail)`` printing one verdict line."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
