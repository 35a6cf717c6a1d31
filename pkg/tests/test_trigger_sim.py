import math
from dataclasses import replace

import numpy as np
import pytest

from etcstab import trigger_sim as ts
from etcstab.core_system import ControlSystem, GramSpace, kappa
from etcstab.lyapunov import build_lyapunov, decay_rate
from etcstab.models import (RandomSkewSpec, TransportSpec, build_model, builtin_initial_state,
                            counterexample_f0, transport_exact)

from conftest import make_case

BACKENDS = ["python"] + (["compiled"] if ts.KERNEL_BACKEND == "compiled" else [])


def scalar_cfg(gamma=0.5, horizon=1.0, **kw):
    return ts.TriggerConfig(gamma=gamma, horizon=horizon, **kw)


def no_input(n=4, seed=0):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, n))
    I = GramSpace.identity(n)
    return ControlSystem(I, GramSpace.identity(1), GramSpace.identity(1), S - S.T,
                         np.zeros((n, 1)), rng.standard_normal((1, n)), [[-1.0]])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(horizon=-1.0),
                                    dict(event_tol=0.1, dt_max=0.01), dict(state_floor=1.0),
                                    dict(max_events=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ts.TriggerConfig(**{"gamma": 0.5, "horizon": 1.0, **kw})

    def test_default_step(self, scalar):
        cfg = scalar_cfg().resolved(scalar)
        assert cfg.dt_max == pytest.approx(0.1 / 1.5)
        assert cfg.output_dt == pytest.approx(1e-3)


class TestPropagateHold:
    def test_zero_duration(self, scalar):
        np.testing.assert_array_equal(ts.propagate_hold(scalar, [0.7], 0.0), [0.7])

    def test_scalar_linear(self, scalar):
        for tau in (0.1, 0.3, 0.9):
            assert ts.propagate_hold(scalar, [2.0], tau)[0] == pytest.approx(2.0 * (1 - tau))

    def test_no_input_isometry(self, rng):
        sys = no_input()
        z = rng.standard_normal(4)
        for m in ("expm", "modal"):
            assert np.linalg.norm(ts.propagate_hold(sys, z, 1.7, m)) == pytest.approx(
                np.linalg.norm(z), rel=1e-12)

    def test_negative_tau(self, scalar):
        with pytest.raises(ValueError):
            ts.propagate_hold(scalar, [1.0], -0.1)

    @pytest.mark.parametrize("name", ["transport", "wave", "kdv", "random"])
    def test_methods_agree_and_semigroup(self, name, rng):
        sys = make_case(name).sys
        zk = sys.H.chol_inv @ rng.standard_normal(sys.n)
        a = ts.propagate_hold(sys, zk, 0.37, "expm")
        b = ts.propagate_hold(sys, zk, 0.37, "modal")
        assert sys.H.norm(a - b) <= 1e-10 * sys.H.norm(a)
        mid = ts.propagate_hold(sys, zk, 0.2)
        two = ts.propagate_hold(sys, mid, 0.17, z_hold=zk)
        assert sys.H.norm(two - a) <= 1e-10 * sys.H.norm(a)


class TestMarginAndEvents:
    def test_margin_examples(self, scalar):
        assert ts.trigger_margin(scalar, [1.0], [1.0], 0.5) == pytest.approx(0.25)
        assert ts.trigger_margin(scalar, [0.0], [1.0], 0.5) == pytest.approx(-1.0)
        tau = 0.5 / 1.5
        assert ts.trigger_margin(scalar, [1 - tau], [1.0], 0.5) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("gamma,k", [(0.5, 1.0), (0.2, 3.0), (1.5, 0.5)])
    def test_scalar_event_time(self, backend, gamma, k):
        sys = build_model(make_case("scalar").spec.__class__(gain=k))
        ev = ts.next_event(sys, [1.0], 0.0, scalar_cfg(gamma, 10.0), backend=backend)
        assert not ev.horizon_reached
        assert abs(ev.t - gamma / (k * (1 + gamma))) <= 1e-9

    def test_no_input_reaches_horizon(self):
        sys = no_input()
        # |C (z - z_k)| <= 2 |C| |z| under an isometric flow
        gamma = 2 * np.linalg.norm(sys.C, 2) + 0.1
        ev = ts.next_event(sys, np.ones(4), 0.0, ts.TriggerConfig(gamma, 5.0))
        assert ev.horizon_reached and ev.t == 5.0

    def test_bisection_failure_reports_bracket(self, scalar):
        cfg = ts.TriggerConfig(0.5, 1.0, event_tol=1e-300)
        with pytest.raises(ts.EventLocalizationError) as info:
            ts.next_event(scalar, [1.0], 0.0, cfg)
        lo, hi = info.value.bracket
        assert lo <= 1 / 3 <= hi

    def test_infinite_gamma_single_hold(self):
        sys = make_case("wave").sys
        z0 = builtin_initial_state(make_case("wave").spec)
        traj = ts.simulate(sys, z0, ts.TriggerConfig(math.inf, 3.0, output_dt=0.5))
        assert traj.n_events == 0 and traj.halted_reason == "horizon"
        for t, z in zip(traj.sample_times, traj.states):
            ref = ts.propagate_hold(sys, z0, t)
            assert sys.H.norm(z - ref) <= 1e-10 * sys.H.norm(z0)


class TestSimulate:
    def test_zero_state(self, scalar):
        traj = ts.simulate(scalar, [0.0], scalar_cfg())
        assert traj.n_events == 0 and traj.halted_reason == "state_floor"
        assert len(traj.sample_times) == 1

    def test_scalar_event_sequence(self, scalar):
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=2.0))
        # every hold ends when z drops by the factor 1 / (1 + gamma)
        np.testing.assert_allclose(np.diff(traj.event_times), 1 / 3, atol=1e-9)
        np.testing.assert_allclose(traj.event_states[:, 0], 1.5 ** -np.arange(traj.n_events + 1),
                                   rtol=1e-8)
        np.testing.assert_allclose(traj.held_inputs[:, 0], -traj.event_states[:, 0])

    def test_zero_gain_conserves_norm(self):
        sys = build_model(RandomSkewSpec(n=5, m=1, seed=2, gain=0.0))
        z0 = np.arange(1.0, 6.0)
        traj = ts.simulate(sys, z0, ts.TriggerConfig(0.2, 5.0))
        np.testing.assert_allclose(traj.norms, np.linalg.norm(z0), rtol=1e-12)

    def test_max_events_flags_zeno(self, scalar):
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=10.0, max_events=5))
        assert traj.halted_reason == "max_events" and traj.zeno_suspected
        assert traj.n_events == 5

    def test_chunking_is_transparent(self, monkeypatch):
        case = make_case("wave")
        z0 = builtin_initial_state(case.spec)
        cfg = ts.TriggerConfig(0.9 * case.design.gamma_max, 5.0)
        full = ts.simulate(case.sys, z0, cfg)
        monkeypatch.setattr(ts, "CHUNK_CAPACITY", 7)
        chunked = ts.simulate(case.sys, z0, cfg)
        np.testing.assert_array_equal(full.event_times, chunked.event_times)
        np.testing.assert_array_equal(full.states, chunked.states)

    def test_trajectory_invariants(self):
        case = make_case("transport")
        z0 = builtin_initial_state(case.spec)
        traj = ts.simulate(case.sys, z0, ts.TriggerConfig(0.9 * case.design.gamma_max, 4.0))
        assert np.all(np.diff(traj.event_times) > 0)
        assert np.all(np.diff(traj.sample_times) > 0)
        assert ts.verify_trigger(traj).passed
        # the state is continuous across events: propagating each hold to its end
        for k in range(min(traj.n_events, 50)):
            end = ts.propagate_hold(case.sys, traj.event_states[k], traj.dwell_times[k], "modal")
            assert case.sys.H.norm(end - traj.event_states[k + 1]) <= 1e-10 * traj.norms[0]

    def test_csv_formats(self, scalar):
        cases = make_case("scalar")
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=1.0, output_dt=0.25), F=cases.F)
        lines = traj.trajectory_csv().splitlines()
        assert lines[0] == "t,norm_H,lyap,event,k"
        assert lines[1].startswith("0,1,")
        ev = traj.events_csv().splitlines()
        assert ev[0] == "k,t_k,dwell,norm_H,input_norm"
        t1 = float(ev[2].split(",")[1])
        assert abs(t1 - 1 / 3) <= 1e-9
        assert len(ev[2].split(",")[1].replace(".", "").lstrip("0")) <= 17


class TestChecks:
    def test_sandwich_no_input_equality(self):
        sys = no_input()
        traj = ts.simulate(sys, np.ones(4), ts.TriggerConfig(0.3, 2.0))
        rep = ts.verify_sandwich(traj, 0.0)
        assert rep.passed and abs(rep.worst_margin) <= 1e-12

    def test_sandwich_scalar(self, scalar):
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=1 / 3 - 1e-6, output_dt=0.01))
        rep = ts.verify_sandwich(traj, kappa(scalar, 0.5))
        assert rep.passed
        assert rep.worst_margin == 0.0 and rep.t_worst == 0.0
        inner = traj.sample_times > 0
        lr = np.log(traj.norms[inner])
        t = traj.sample_times[inner]
        assert np.all(lr < 1.5 * t) and np.all(lr > -1.5 * t)

    def test_sandwich_detects_violation(self, scalar):
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=2.0))
        assert not ts.verify_sandwich(traj, 0.1).passed

    def test_derivative_bound_scalar(self, scalar):
        traj = ts.simulate(scalar, [1.0], scalar_cfg(horizon=2.0))
        rep = ts.verify_derivative_bound(traj, scalar)
        assert rep.passed
        speeds = ts.derivative_norms(traj)
        np.testing.assert_allclose(speeds, np.abs(traj.event_states[traj.interval, 0]), rtol=1e-12)

    def test_derivative_bound_no_input(self):
        sys = no_input()
        traj = ts.simulate(sys, np.ones(4), ts.TriggerConfig(0.3, 2.0))
        speeds = ts.derivative_norms(traj)
        np.testing.assert_allclose(speeds, np.linalg.norm(sys.A @ np.ones(4)), rtol=1e-12)
        assert ts.verify_derivative_bound(traj, sys).passed

    def test_dwell_bound_scalar(self, scalar):
        bound = ts.dwell_bound(scalar, [1.0], 0.5, 1.0)
        assert bound == pytest.approx(0.5 * math.exp(-5.5) / 2, rel=1e-12)
        small = [ts.dwell_bound(scalar, [1.0], g, 1.0) for g in (0.1, 1e-3, 1e-6)]
        assert bound > small[0] > small[1] > small[2] and small[2] < 1e-6
        with pytest.raises(ValueError):
            ts.dwell_bound(scalar, [0.0], 0.5, 1.0)

    def test_fit_synthetic(self):
        t = np.linspace(0, 10, 101)
        obs, C = ts.fit_norm_decay(t, np.exp(-0.3 * t))
        assert abs(obs - 0.3) <= 1e-10 and C == pytest.approx(1.0)
        with pytest.raises(ValueError):
            ts.fit_norm_decay(t[:5], np.exp(-t[:5]))

    def test_fit_continuous_transport(self):
        spec = TransportSpec(nx=31)
        sys = build_model(spec)
        t = np.linspace(0, 10, 201)
        z = ts.continuous_flow(sys, builtin_initial_state(spec), t)
        obs, _ = ts.fit_norm_decay(t, [sys.H.norm(v) for v in z])
        assert obs >= 0.45

    def test_fit_flags_floor(self):
        case = make_case("kdv")
        z0 = builtin_initial_state(case.spec)
        traj = ts.simulate(case.sys, z0, ts.TriggerConfig(0.9 * case.design.gamma_max, 5000.0,
                                                          state_floor=1e-3))
        fit = ts.fit_decay(traj)
        assert traj.halted_reason == "state_floor" and fit.floor_flagged

    @pytest.mark.parametrize("name", ["transport", "wave", "kdv"])
    def test_lyapunov_decays_across_events(self, name):
        case = make_case(name)
        d = case.design
        gamma = 0.5 * d.gamma_max
        delta = 0.9 * d.delta_max(gamma)
        F = build_lyapunov(case.sys, case.cert, d.beta_star(gamma, delta))
        db, _ = decay_rate(F, gamma)
        traj = ts.simulate(case.sys, builtin_initial_state(case.spec),
                           ts.TriggerConfig(gamma, 20.0), F=F)
        assert traj.n_events > 0
        assert ts.verify_lyapunov_events(traj, db).passed


class TestPeriodic:
    def test_single_hold(self, scalar):
        traj = ts.simulate_periodic(scalar, [1.0], 5.0, 2.0)
        assert traj.n_events == 0
        assert traj.norms[-1] == pytest.approx(1.0)  # z(2) = 1 - 2 = -1

    def test_counterexample_norm_preserved(self):
        ce = counterexample_f0(TransportSpec(nx=31), 0.5)
        sys = build_model(ce.spec)
        traj = ts.simulate_periodic(sys, ce.f0, ce.period, (ce.k_star + 0.5) * ce.period)
        n0 = sys.H.norm(ce.f0)
        ratio = sys.H.norm(traj.event_states[ce.k_star]) / n0
        assert abs(ratio - 1) <= 1e-6
        # the held input vanishes, so the sampled loop is the free transport flow
        free = transport_exact(replace(ce.spec, gain=0.0), ce.f0, ce.k_star * ce.period)
        assert sys.H.norm(traj.event_states[ce.k_star] - free) <= 1e-10 * n0

    def test_generic_datum_decays(self, rng):
        case = make_case("transport")
        z0 = rng.standard_normal(case.sys.n)
        per = ts.simulate_periodic(case.sys, z0, 0.005, 10.0)
        trig = ts.simulate(case.sys, z0, ts.TriggerConfig(0.9 * case.design.gamma_max, 10.0))
        d_per = ts.fit_decay(per).observed_delta
        d_trig = ts.fit_decay(trig).observed_delta
        assert d_per > 0.4 and abs(d_per - d_trig) <= 0.1 * d_trig
