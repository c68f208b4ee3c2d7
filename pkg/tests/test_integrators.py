import math

import numpy as np
import pytest

from cpdsplit.diagnostics import rel_error, slope_fit
from cpdsplit.fields import INITIAL_STATES, constant, energy, make_preset, problem1, problem2, rot_apply
from cpdsplit.integrators import (SchemeId, SolverParams, State, StepFailure, analytic_constant,
                                  integrate, phi_L, phi_NL_avf, step, step_s1_avf, step_s1_sv,
                                  step_s1_vp)
from cpdsplit.reference import integrate_reference


def initial(name):
    return State.from_values(*INITIAL_STATES[name])


def drift(model, traj):
    return np.max(np.abs(traj.H - traj.H[0])) / abs(traj.H[0])


class TestSubflows:
    def test_phi_L_identity_at_zero_step(self):
        s = initial("problem2")
        out = phi_L(problem2(0.01), s, 0.0)
        np.testing.assert_array_equal(out.v, s.v)
        np.testing.assert_array_equal(out.x, s.x)

    def test_phi_L_quarter_turn(self):
        model = constant([0, 0, 1.0], [0, 0, 0])
        out = phi_L(model, State.from_values([0, 0, 0], [1, 0, 0], 3.0), math.pi / 2)
        np.testing.assert_allclose(out.v, [0, -1, 0], atol=1e-15)
        assert out.t == 3.0

    @pytest.mark.parametrize("name", ["problem1", "problem2", "constant"])
    def test_phi_L_keeps_speed(self, name):
        model = make_preset(name, 0.01)
        s = initial(name)
        for h in (1e-3, 0.01, 0.1, 1.0):
            out = phi_L(model, s, h)
            assert abs(np.linalg.norm(out.v) - np.linalg.norm(s.v)) <= 1e-14 * np.linalg.norm(s.v)
            np.testing.assert_array_equal(out.x, s.x)

    def test_avf_drift_only(self):
        model = constant([0, 0, 1.0], [0, 0, 0])
        s = State.from_values([1, 2, 3], [0.5, -0.5, 1])
        out, stats = phi_NL_avf(model, s, 0.1)
        np.testing.assert_allclose(out.x, s.x + 0.1 * s.v, atol=1e-15)
        np.testing.assert_array_equal(out.v, s.v)
        assert stats.iterations == 1 and stats.converged

    def test_avf_constant_field(self):
        e0 = np.array([0.3, -0.2, 0.1])
        model = constant([0, 0, 1.0], e0)
        s = State.from_values([1, 2, 3], [0.5, -0.5, 1])
        h = 0.2
        out, _ = phi_NL_avf(model, s, h)
        np.testing.assert_allclose(out.x, s.x + h * s.v + h * h / 2 * e0, atol=1e-15)
        np.testing.assert_allclose(out.v, s.v + h * e0, atol=1e-15)

    def test_avf_problem2_iterations(self):
        out, stats = phi_NL_avf(problem2(0.01), initial("problem2"), 1e-3)
        assert stats.iterations <= 5
        assert stats.residual <= 1e-14

    def test_avf_velocity_position_identity(self):
        model = problem2(1.0)
        rng = np.random.default_rng(2)
        for _ in range(50):
            s = State.from_values(rng.uniform(-1, 1, 3), rng.normal(size=3))
            h = rng.uniform(1e-3, 0.05)
            out, _ = phi_NL_avf(model, s, h)
            lhs = out.v - s.v
            rhs = (2 / h) * (out.x - s.x - h * s.v)
            assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_non_convergence_is_reported(self):
        with pytest.raises(StepFailure) as info:
            integrate("S1AVF", problem2(1.0), initial("problem2"), 0.01, 5,
                      SolverParams(fp_max_iters=1))
        assert info.value.step == 0
        assert info.value.residual > 1e-14

    def test_solver_params_validation(self):
        with pytest.raises(ValueError):
            SolverParams(fp_tol=0.0)
        with pytest.raises(ValueError):
            SolverParams(nodes=(0.5,), weights=(0.9,))


class TestSchemes:
    def test_zero_field_schemes_agree(self):
        om = np.array([0.4, -1.1, 2.0])
        model = constant(om, [0, 0, 0])
        rng = np.random.default_rng(4)
        for _ in range(20):
            s = State.from_values(rng.normal(size=3), rng.normal(size=3))
            h = rng.uniform(0.001, 0.5)
            a, _ = step_s1_avf(model, s, h)
            b = step_s1_sv(model, s, h)
            c = step_s1_vp(model, s, h)
            vr = rot_apply(om, h, s.v)
            np.testing.assert_allclose(a.v, vr, atol=1e-14)
            np.testing.assert_allclose(a.x, s.x + h * vr, atol=1e-14)
            for other in (b, c):
                assert np.max(np.abs(other.x - a.x)) <= 1e-14
                assert np.max(np.abs(other.v - a.v)) <= 1e-14

    def test_clock_advances(self):
        s = initial("problem1")
        for scheme in SchemeId:
            out, _ = step(scheme, problem1(1.0), s, 0.125)
            assert out.t == 0.125

    def test_vp_zero_step_identity(self):
        model = constant([0, 0, 1.0], [0, 0, 0])
        s = State.from_values([1, 2, 3], [0.5, -0.5, 1])
        out = step_s1_vp(model, s, 0.0)
        np.testing.assert_array_equal(out.x, s.x)
        np.testing.assert_array_equal(out.v, s.v)

    def test_avf_energy_problem2(self):
        model = problem2(0.01)
        traj = integrate("S1AVF", model, initial("problem2"), 0.01, 10_000, sample_every=10)
        assert drift(model, traj) <= 1e-10

    def test_avf_energy_budget(self):
        model = problem2(1.0)
        p = SolverParams()
        n = 2000
        traj = integrate("S1AVF", model, initial("problem2"), 0.01, n, p)
        H0 = traj.H[0]
        assert np.max(np.abs(traj.H - H0)) <= n * 10 * p.fp_tol * (1 + abs(H0))

    def test_sv_constant_field_energy(self):
        model = constant([0, 0, 1.0], [0.1, 0.05, 0.0])
        traj = integrate("S1SV", model, initial("constant"), 0.01, 10_000, sample_every=10)
        assert drift(model, traj) <= 1e-12

    @pytest.mark.parametrize("scheme", list(SchemeId))
    def test_local_order_against_closed_form(self, scheme):
        om, e0 = np.array([0.3, -0.8, 1.1]), np.array([0.2, 0.1, -0.4])
        model = constant(om, e0)
        s0 = State.from_values([1.0, 0.5, -0.2], [0.3, -0.6, 0.9])
        errs = []
        for k in range(6, 11):
            h = 2.0 ** -k
            out, _ = step(scheme, model, s0, h)
            ex = analytic_constant(om, e0, s0, h)
            errs.append(np.linalg.norm(np.concatenate([out.x - ex.x, out.v - ex.v])))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all((ratios >= 3) & (ratios <= 5)), ratios

    def test_avf_one_step_problem1(self):
        model = problem1(1.0)
        s0 = initial("problem1")
        errs = []
        for h in (1e-3, 5e-4):
            out, _ = step_s1_avf(model, s0, h)
            ref = integrate_reference(model, s0, h)
            errs.append(np.linalg.norm(np.concatenate([out.x - ref.x, out.v - ref.v])))
        assert 3 <= errs[0] / errs[1] <= 5

    def test_sv_global_order_problem1(self):
        model = problem1(1.0)
        s0 = initial("problem1")
        ref = integrate_reference(model, s0, 1.0)
        pts = []
        for k in range(6, 13):
            traj = integrate("S1SV", model, s0, 2.0 ** -k, 2 ** k, sample_every=2 ** k)
            pts.append((2.0 ** -k, sum(rel_error(traj.final, ref, model))))
        assert 0.9 <= slope_fit(pts) <= 1.1

    def test_vp_uniform_in_eps(self):
        s0 = initial("problem1")
        h, n = 2.0 ** -10, 2 ** 10
        errs = []
        for eps in (1.0, 2.0 ** -8):
            model = problem1(eps)
            ref = integrate_reference(model, s0, 1.0)
            final = integrate("S1VP", model, s0, h, n, sample_every=n).final
            errs.append(sum(rel_error(final, ref, model)))
        assert max(errs) / min(errs) <= 20


class TestIntegrate:
    def test_zero_steps(self):
        s0 = initial("problem2")
        traj = integrate("S1AVF", problem2(0.1), s0, 0.01, 0)
        assert len(traj) == 1
        assert traj.final is s0

    def test_one_step_matches_stepper(self):
        model, s0 = problem2(0.1), initial("problem2")
        traj = integrate("S1SV", model, s0, 0.01, 1)
        direct = step_s1_sv(model, s0, 0.01)
        np.testing.assert_array_equal(traj.x[-1], direct.x)
        np.testing.assert_array_equal(traj.v[-1], direct.v)

    def test_sampling_keeps_final(self):
        traj = integrate("S1VP", problem2(0.1), initial("problem2"), 0.01, 25, sample_every=10)
        np.testing.assert_allclose(traj.t, [0, 0.1, 0.2, 0.25])

    def test_records_energy_and_vpar(self):
        model = problem2(0.1)
        traj = integrate("S1AVF", model, initial("problem2"), 0.01, 3)
        assert traj.H[0] == pytest.approx(2.04692, abs=1e-12)
        om = model.omega(traj.x[2])
        np.testing.assert_allclose(traj.vpar[2], (om @ traj.v[2]) / (om @ om) * om)

    def test_deterministic(self):
        a = integrate("S1AVF", problem1(0.1), initial("problem1"), 2.0 ** -6, 64)
        b = integrate("S1AVF", problem1(0.1), initial("problem1"), 2.0 ** -6, 64)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.v, b.v)

    def test_problem1_avf_final_state(self):
        model, s0 = problem1(1.0), initial("problem1")
        ref = integrate_reference(model, s0, 1.0)
        final = integrate("S1AVF", model, s0, 2.0 ** -10, 2 ** 10, sample_every=1024).final
        rel = np.linalg.norm(np.concatenate([final.x - ref.x, final.v - ref.v])) \
            / np.linalg.norm(np.concatenate([ref.x, ref.v]))
        assert rel <= 1e-2

    def test_scheme_names(self):
        assert SchemeId.parse("s1-avf") is SchemeId.S1AVF
        with pytest.raises(ValueError):
            SchemeId.parse("strang")


class TestAnalyticConstant:
    def test_full_turn(self):
        s0 = State.from_values([0, 0, 0], [1, 0, 0])
        out = analytic_constant([0, 0, 1], [0, 0, 0], s0, 2 * math.pi)
        np.testing.assert_allclose(out.v, [1, 0, 0], atol=1e-14)
        np.testing.assert_allclose(out.x, [0, 0, 0], atol=1e-14)

    def test_free_fall(self):
        e0 = np.array([0.1, -0.3, 0.2])
        s0 = State.from_values([1, 2, 3], [0.5, 0.5, -1])
        t = 1.7
        out = analytic_constant([0, 0, 0], e0, s0, t)
        np.testing.assert_allclose(out.x, s0.x + t * s0.v + t * t / 2 * e0, atol=1e-14)
        np.testing.assert_allclose(out.v, s0.v + t * e0, atol=1e-14)

    def test_conserves_energy(self):
        om, e0 = np.array([0.5, 1.0, -2.0]), np.array([0.3, 0.3, 0.1])
        model = constant(om, e0)
        s0 = State.from_values([0.1, 0.2, 0.3], [1, 0, 0])
        for t in (0.5, 3.0, 10.0):
            assert energy(model, analytic_constant(om, e0, s0, t)) == pytest.approx(
                energy(model, s0), abs=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            om, e0 = rng.normal(size=3) * 3, rng.normal(size=3)
            s0 = State.from_values(rng.normal(size=3), rng.normal(size=3))
            a = analytic_constant(om, e0, s0, 1.0)
            r = integrate_reference(constant(om, e0), s0, 1.0)
            assert np.max(np.abs(np.concatenate([a.x - r.x, a.v - r.v]))) <= 1e-9
