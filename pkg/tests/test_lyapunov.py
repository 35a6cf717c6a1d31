import math

import numpy as np
import pytest

from etcstab.core_system import ControlSystem, GramSpace, certify_stability, certify_system
from etcstab.lyapunov import (QuadratureError, TriggerDesign, build_lyapunov, decay_rate,
                              lyap_gradient, lyap_value, lyap_values, lyapunov_constants,
                              quadrature_oracle, trigger_bound)
from etcstab.models import ScalarSpec, WaveSpec, build_model

from conftest import random_states


def scalar(a=1.0):
    return build_model(ScalarSpec(gain=a))


class TestBuild:
    def test_scalar_closed_form_Q(self):
        sys = scalar(2.0)
        cert = certify_system(sys)
        F = build_lyapunov(sys, cert, 0.5)
        assert F.Q[0, 0] == pytest.approx(1 / (2 * (2.0 - 0.5)), rel=1e-13)

    def test_beta_out_of_range(self):
        sys = scalar()
        cert = certify_system(sys)
        with pytest.raises(ValueError, match="beta out of range"):
            build_lyapunov(sys, cert, cert.alpha)

    def test_eta_too_small(self):
        sys = scalar()
        cert = certify_system(sys)
        with pytest.raises(ValueError, match="eta too small"):
            build_lyapunov(sys, cert, 0.3, eta=0.1)

    def test_eta_zero_override(self, rng):
        sys = build_model(WaveSpec(nx=7))
        cert = certify_system(sys)
        F = build_lyapunov(sys, cert, 0.1, eta=0.0, allow_small_eta=True)
        assert (F.C0, F.C1, F.C2) == (2.0, 0.5, 0.5)
        z = rng.standard_normal(sys.n)
        assert lyap_value(F, z) == pytest.approx(0.5 * sys.H.norm(z) ** 2)
        np.testing.assert_allclose(lyap_gradient(F, z), z, rtol=1e-12)

    def test_half_alpha_constants(self, case):
        F = build_lyapunov(case.sys, case.cert, 0.5 * case.cert.alpha)
        assert F.c1 == 0.0
        assert F.C2 == 0.5 * (1 + case.cert.M**2) or \
            F.C2 == pytest.approx(0.5 * (1 + case.cert.M**2), rel=1e-14)
        assert F.C1 == 0.5

    def test_functional_json_keys(self, case):
        assert set(case.F.to_dict()) == {"beta", "eta", "C0", "C1", "C2", "Q"}


class TestValues:
    def test_zero(self, case):
        z = np.zeros(case.sys.n)
        assert lyap_value(case.F, z) == 0.0
        np.testing.assert_array_equal(lyap_gradient(case.F, z), z)

    def test_batch_matches_single(self, case, rng):
        Z = random_states(case.sys, 5, rng)
        X = case.sys.H.chol @ Z
        np.testing.assert_allclose(lyap_values(case.F, X),
                                   [lyap_value(case.F, Z[:, j]) for j in range(5)], rtol=1e-13)

    def test_sandwich(self, case, rng):
        F = case.F
        for z in random_states(case.sys, 50, rng).T:
            sq = case.sys.H.norm(z) ** 2
            v = lyap_value(F, z)
            assert F.C1 * sq <= v * (1 + 1e-12)
            assert v <= F.C2 * sq * (1 + 1e-9)

    def test_gradient_bound(self, case, rng):
        F = case.F
        for z in random_states(case.sys, 20, rng).T:
            g = lyap_gradient(F, z)
            assert case.sys.H.norm(g) <= F.C0 * case.sys.H.norm(z) * (1 + 1e-9)


class TestQuadrature:
    def test_zero_state(self, case):
        assert quadrature_oracle(case.sys, case.cert, case.F.beta, case.F.eta,
                                 np.zeros(case.sys.n)) == 0.0

    def test_scalar_closed_form(self):
        sys = scalar(1.5)
        cert = certify_system(sys)
        beta, eta = 0.4, 0.7
        expect = 0.5 + eta / (2 * (1.5 - beta))
        assert quadrature_oracle(sys, cert, beta, eta, [1.0]) == pytest.approx(expect, rel=1e-10)

    def test_matches_wave(self, rng):
        sys = build_model(WaveSpec(nx=7))
        cert = certify_system(sys)
        F = build_lyapunov(sys, cert, 0.5 * cert.alpha)
        Z = random_states(sys, 4, rng)
        quad = quadrature_oracle(sys, cert, F.beta, F.eta, Z)
        exact = [lyap_value(F, z) for z in Z.T]
        np.testing.assert_allclose(quad, exact, rtol=1e-6)

    def test_refinement_cap(self):
        sys = build_model(WaveSpec(nx=7))
        cert = certify_system(sys)
        with pytest.raises(QuadratureError) as info:
            quadrature_oracle(sys, cert, 0.5 * cert.alpha, 1.0, np.ones(sys.n), tail_tol=1e-14,
                              order=2, max_panels=16)
        assert info.value.achieved > 0


class TestTriggerDesign:
    def test_radius_formula(self):
        d = TriggerDesign(r=0, gamma_max=0, alpha=1.0, M=1.0, c1=0.0, norm_BK=1.0, norm_BKC=1.0)
        r = d.norm_BK * math.sqrt(2 * (1 + (d.norm_BKC + d.alpha) * d.M**2))
        assert r == pytest.approx(math.sqrt(6))

    def test_unit_instance(self):
        # alpha = 1, M = 1, |BK| = |BKC| = 1: scalar loop with K = -1 / 0.95 shift
        sys = scalar(1.0 / 0.95)
        cert = certify_system(sys)
        design = trigger_bound(sys, cert)
        assert cert.alpha == pytest.approx(1.0) and cert.M == pytest.approx(1.0)
        norm = 1.0 / 0.95
        assert design.r == pytest.approx(norm * math.sqrt(2 * (1 + norm + 1.0)))

    def test_no_input_is_unconstrained(self):
        G = GramSpace.identity(1)
        sys = ControlSystem(G, G, G, [[-1.0]], [[0.0]], [[1.0]], [[-1.0]], tol_skew=10.0)
        design = trigger_bound(sys, certify_stability([[-1.0]], G))
        assert design.r == 0.0 and math.isinf(design.gamma_max) and design.unconstrained
        assert design.to_dict()["gamma_max"] is None

    def test_decay_rate_examples(self):
        d = TriggerDesign(r=2.0, gamma_max=0.5, alpha=1.0, M=1.0, c1=0.0, norm_BK=1.0,
                          norm_BKC=1.0)
        assert d.delta_beta(1.0, 0.1) == pytest.approx(1 - 0.1 * 2)
        assert d.delta_beta(0.7, 0.0) == 0.7

    def test_beta_star_admissible(self, case):
        design = case.design
        if design.unconstrained:
            pytest.skip("no trigger constraint")
        for frac in (0.1, 0.5, 0.9):
            gamma = frac * design.gamma_max
            delta = 0.9 * design.delta_max(gamma)
            beta = design.beta_star(gamma, delta)
            assert 0 < beta < design.alpha
            assert design.delta_tilde(beta, gamma) > delta
            F = build_lyapunov(case.sys, case.cert, beta)
            db, dt = decay_rate(F, gamma)
            assert db >= dt > delta

    def test_beta_star_rejects_bad_delta(self, case):
        design = case.design
        gamma = 0.5 * design.gamma_max
        with pytest.raises(ValueError):
            design.beta_star(gamma, design.delta_max(gamma))

    def test_constants_formula(self):
        C0, C1, C2 = lyapunov_constants(0.0, 0.2, 0.3, 1.0, 2.0)
        assert C0 == pytest.approx(2 * math.sqrt(1 + 0.3 * 4))
        assert C1 == 0.5
        assert C2 == pytest.approx(0.5 * (1 + 0.3 * 4 / 0.8))
