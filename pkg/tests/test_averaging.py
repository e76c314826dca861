"""Ergodic averages, their structural properties, and correctors."""

import numpy as np
import pytest

from ergodiff import (
    ConfigurationError,
    FlowIntegratorConfig,
    UnsupportedModeError,
    average_properties_check,
    box_quadrature,
    constant_matrix_field,
    corrector_solve,
    ergodic_average,
    gyro_average_closed_form,
    gyrokinetic_field,
    identity_matrix_field,
    random_polynomial_field,
    rotation_average_closed_form,
    rotation_field,
    rotation_weights,
)
from ergodiff.averaging import average_invariance_residual
from ergodiff.fields import VectorFieldSpec
from ergodiff.transport import group_apply

ANALYTIC = FlowIntegratorConfig(method="analytic")
RK4 = FlowIntegratorConfig(method="rk4", step=1e-3)


def linear_drift_without_period(matrix):
    M = np.asarray(matrix, dtype=float)
    m = M.shape[0]
    return VectorFieldSpec(
        dim=m,
        eval=lambda y: np.asarray(y, float) @ M.T,
        jacobian=lambda y: np.broadcast_to(M, np.shape(y)[:-1] + (m, m)).copy(),
        divergence=lambda y: np.full(np.shape(y)[:-1], float(np.trace(M))),
        growth_bound=float(np.max(np.abs(M))) * m,
    )


class TestRotationAverage:
    def test_identity_tensor_reduces_to_closed_form(self):
        field = rotation_field(1.0, 4.0)
        avg = ergodic_average(identity_matrix_field(2), field, ANALYTIC, s_nodes=256)
        quad = box_quadrature(dim=2, n_per_axis=64)
        vals = avg.average.eval(quad.nodes)
        expected = rotation_average_closed_form(1.0, 4.0)
        np.testing.assert_allclose(vals, np.broadcast_to(expected, vals.shape), atol=1e-8)
        np.testing.assert_allclose(expected, np.diag([2.5, 0.625]), atol=1e-15)

    def test_general_parameters_match_closed_form(self):
        for beta, gamma in [(0.5, 2.0), (3.0, 1.0)]:
            field = rotation_field(beta, gamma)
            D = constant_matrix_field(np.diag([1.7, 0.4]))
            avg = ergodic_average(D, field, ANALYTIC, s_nodes=128)
            pts = np.random.default_rng(0).uniform(-3, 3, size=(10, 2))
            expected = rotation_average_closed_form(beta, gamma, 1.7, 0.4)
            np.testing.assert_allclose(avg.average.eval(pts),
                                       np.broadcast_to(expected, (10, 2, 2)), atol=1e-10)

    def test_rk4_agrees_with_analytic(self):
        field = rotation_field(1.0, 4.0)
        D = identity_matrix_field(2)
        pts = np.array([[0.5, -0.5], [1.0, 2.0]])
        a1 = ergodic_average(D, field, ANALYTIC, s_nodes=64).average.eval(pts)
        a2 = ergodic_average(D, field, FlowIntegratorConfig("rk4", step=2e-3),
                             s_nodes=64).average.eval(pts)
        assert np.max(np.abs(a1 - a2)) <= 1e-8

    def test_nonconstant_tensor_against_flow_line_quadrature(self):
        # Independent oracle: average the scalar weights along the flow
        # and combine with the trigonometric second moments.
        beta, gamma = 1.0, 4.0
        field = rotation_field(beta, gamma)
        omega = np.sqrt(beta * gamma)
        lam1 = lambda y: 1.0 + y[..., 0] ** 2
        lam2 = lambda y: 0.5 + y[..., 1] ** 2

        def tensor_eval(y):
            y = np.asarray(y, float)
            out = np.zeros(y.shape[:-1] + (2, 2))
            out[..., 0, 0] = lam1(y)
            out[..., 1, 1] = lam2(y)
            return out

        from ergodiff.transport import MatrixFieldFn

        D = MatrixFieldFn(dim=2, eval=tensor_eval, symmetric=True)
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=256)
        pts = np.array([[0.7, -0.3], [1.5, 0.4]])
        got = avg.average.eval(pts)

        T = field.period
        s = np.arange(4096) * (T / 4096)
        orbit = np.stack([field.flow(float(sv), pts) for sv in s])  # (ns, np, 2)
        l1 = lam1(orbit)
        l2 = lam2(orbit)
        c2 = np.cos(2 * omega * s)[:, None]
        s2 = np.sin(2 * omega * s)[:, None]
        want = np.zeros_like(got)
        want[..., 0, 0] = 0.5 * np.mean(l1 * (1 + c2), axis=0) \
            + gamma / (2 * beta) * np.mean(l2 * (1 - c2), axis=0)
        off = (np.sqrt(beta) / (2 * np.sqrt(gamma))) * np.mean(l1 * s2, axis=0) \
            - (np.sqrt(gamma) / (2 * np.sqrt(beta))) * np.mean(l2 * s2, axis=0)
        want[..., 0, 1] = off
        want[..., 1, 0] = off
        want[..., 1, 1] = beta / (2 * gamma) * np.mean(l1 * (1 - c2), axis=0) \
            + 0.5 * np.mean(l2 * (1 + c2), axis=0)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_one_period_requires_declared_period(self):
        drift = linear_drift_without_period([[0.0, 1.0], [-1.0, 0.0]])
        with pytest.raises(ConfigurationError):
            ergodic_average(identity_matrix_field(2), drift, RK4, s_nodes=32)


class TestGyroAverage:
    @pytest.mark.parametrize("wc", [1.0, 2.0])
    def test_velocity_identity_tensor(self, wc):
        field = gyrokinetic_field(wc)
        D = constant_matrix_field(np.diag([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]))
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=256)
        rng = np.random.default_rng(21)
        pts = rng.normal(size=(20, 6))
        vals = avg.average.eval(pts)
        expected = gyro_average_closed_form(wc)
        np.testing.assert_allclose(vals, np.broadcast_to(expected, vals.shape), atol=1e-7)


class TestProjectionStructure:
    def test_invariant_field_is_fixed(self):
        field = rotation_field(1.0, 1.0)
        avg = ergodic_average(identity_matrix_field(2), field, ANALYTIC, s_nodes=64)
        pts = np.random.default_rng(1).uniform(-3, 3, size=(30, 2))
        assert np.max(np.abs(avg.average.eval(pts) - np.eye(2))) <= 1e-8

    def test_idempotence(self):
        field = rotation_field(1.0, 4.0)
        A = random_polynomial_field(seed=2)
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=64)
        avg2 = ergodic_average(avg.average, field, ANALYTIC, s_nodes=64)
        pts = np.random.default_rng(2).uniform(-2, 2, size=(50, 2))
        assert np.max(np.abs(avg2.average.eval(pts) - avg.average.eval(pts))) <= 1e-6

    def test_base_point_independence(self):
        field = rotation_field(1.0, 4.0)
        A = random_polynomial_field(seed=3)
        T = field.period
        pts = np.random.default_rng(3).uniform(-2, 2, size=(40, 2))
        base = ergodic_average(A, field, ANALYTIC, s_nodes=256).average.eval(pts)
        for r in (0.37 * T, 0.81 * T):
            shifted = ergodic_average(A, field, ANALYTIC, s_nodes=256,
                                      base_point=r).average.eval(pts)
            assert np.max(np.abs(shifted - base)) <= 1e-8

    def test_invariance_residual(self):
        field = rotation_field(1.0, 4.0)
        A = random_polynomial_field(seed=4)
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=256)
        pts = np.random.default_rng(4).uniform(-2, 2, size=(25, 2))
        res = average_invariance_residual(avg, [0.2, 0.9, 1.4, 2.2, 3.0], pts)
        assert res <= 1e-5

    def test_symmetry_tag_preserved(self):
        field = rotation_field(1.0, 1.0)
        avg = ergodic_average(random_polynomial_field(seed=5), field, ANALYTIC, s_nodes=32)
        assert avg.average.symmetric


class TestCesaroMode:
    def test_whole_multiple_horizon_matches_one_period(self):
        field = rotation_field(1.0, 4.0)
        A = random_polynomial_field(seed=6)
        pts = np.array([[0.4, 0.9], [-1.1, 0.2]])
        one = ergodic_average(A, field, ANALYTIC, s_nodes=256).average.eval(pts)
        S = 50.0 * field.period
        ces = ergodic_average(A, field, ANALYTIC, s_nodes=4096, mode="cesaro",
                              cesaro_horizon=S).average.eval(pts)
        assert np.max(np.abs(ces - one)) <= 1e-3

    def test_partial_period_error_shrinks_with_horizon(self):
        field = rotation_field(1.0, 1.0)
        A = constant_matrix_field(np.diag([2.0, 0.0]))
        pts = np.array([[0.5, 0.5]])
        one = ergodic_average(A, field, ANALYTIC, s_nodes=128).average.eval(pts)
        devs = []
        for mult in (10.3, 41.2):
            S = mult * field.period
            ces = ergodic_average(A, field, ANALYTIC, s_nodes=8192, mode="cesaro",
                                  cesaro_horizon=S).average.eval(pts)
            devs.append(np.max(np.abs(ces - one)))
        assert devs[1] <= devs[0] / 2.0

    def test_missing_horizon_rejected(self):
        field = rotation_field(1.0, 1.0)
        with pytest.raises(ConfigurationError):
            ergodic_average(identity_matrix_field(2), field, ANALYTIC, s_nodes=32,
                            mode="cesaro")


class TestAverageProperties:
    def test_identity_input_all_checks_pass(self):
        field = rotation_field(1.0, 1.0)
        A = identity_matrix_field(2)
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=64)
        quad = box_quadrature(dim=2, n_per_axis=32)
        report = average_properties_check(A, avg, quad, alpha=1.0)
        assert report.all_ok
        assert abs(report.coercivity_margin) <= 1e-8
        assert abs(report.l2_norm_average - report.l2_norm_input) <= 1e-8

    def test_anisotropic_rotation_margins(self):
        field = rotation_field(1.0, 4.0)
        A = identity_matrix_field(2)
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=256)
        quad = box_quadrature(dim=2, n_per_axis=32)
        report = average_properties_check(A, avg, quad, alpha=0.625)
        assert report.min_eig_average == pytest.approx(0.625, abs=1e-8)
        assert report.coercive_ok
        assert report.symmetric_ok and report.positive_ok

    def test_indefinite_average_reports_failure_without_raising(self):
        field = rotation_field(1.0, 1.0)
        A = constant_matrix_field(-np.eye(2))
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=64)
        quad = box_quadrature(dim=2, n_per_axis=16)
        report = average_properties_check(A, avg, quad, alpha=0.0)
        assert not report.positive_ok
        assert report.min_eig_average == pytest.approx(-1.0, abs=1e-10)
        assert report.min_eig_input == pytest.approx(-1.0, abs=1e-12)

    def test_norm_contraction_for_generic_field(self):
        beta, gamma = 1.0, 4.0
        field = rotation_field(beta, gamma)
        p, q = rotation_weights(beta, gamma)
        quad = box_quadrature(dim=2, n_per_axis=48,
                              p_field=constant_matrix_field(p),
                              q_field=constant_matrix_field(q))
        A = random_polynomial_field(seed=7)
        avg = ergodic_average(A, field, ANALYTIC, s_nodes=128)
        report = average_properties_check(A, avg, quad, alpha=-10.0)
        assert report.l2_contract_ok and report.sup_contract_ok


class TestCorrector:
    def test_invariant_input_has_zero_corrector(self):
        field = rotation_field(1.0, 1.0)
        D = identity_matrix_field(2)
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=64)
        quad = box_quadrature(dim=2, n_per_axis=16)
        res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
        pts = np.random.default_rng(5).uniform(-2, 2, size=(20, 2))
        assert np.max(np.abs(res.corrector.eval(pts))) <= 1e-10
        assert res.residual <= 1e-8
        assert res.mean_norm <= 1e-10

    def test_rotation_fluctuation_has_hand_computed_corrector(self):
        # For the rigid rotation and D = diag(2,0) the fluctuation
        # oscillates at twice the angular frequency and the corrector is
        # the constant matrix [[0,-1/2],[-1/2,0]].
        field = rotation_field(1.0, 1.0)
        D = constant_matrix_field(np.diag([2.0, 0.0]))
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=128)
        quad = box_quadrature(dim=2, n_per_axis=32)
        res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
        pts = np.random.default_rng(6).uniform(-2, 2, size=(15, 2))
        expected = np.array([[0.0, -0.5], [-0.5, 0.0]])
        np.testing.assert_allclose(res.corrector.eval(pts),
                                   np.broadcast_to(expected, (15, 2, 2)), atol=1e-8)
        assert res.residual <= 1e-4
        assert res.mean_norm <= 1e-6

    def test_central_difference_certifies_generator_equation(self):
        field = rotation_field(1.0, 4.0)
        D = constant_matrix_field(np.diag([2.0, 0.5]))
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=128)
        quad = box_quadrature(dim=2, n_per_axis=24)
        res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
        assert res.residual <= 1e-4
        assert res.mean_norm <= 1e-6

    def test_spatially_varying_tensor(self):
        field = rotation_field(1.0, 1.0)
        D = random_polynomial_field(seed=8, psd=True)
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=256)
        quad = box_quadrature(dim=2, n_per_axis=24)
        res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
        assert res.residual <= 1e-4
        assert res.mean_norm <= 1e-6

    def test_aperiodic_flow_rejected(self):
        drift = linear_drift_without_period([[0.0, 1.0], [-1.0, 0.0]])
        D = identity_matrix_field(2)
        fake_avg = ergodic_average(D, rotation_field(1.0, 1.0), ANALYTIC, s_nodes=32)
        with pytest.raises(UnsupportedModeError):
            corrector_solve(D, fake_avg, drift, RK4)

    def test_fluctuation_decomposition_closes(self):
        # D = average + generator(corrector), node-wise.
        field = rotation_field(1.0, 1.0)
        D = constant_matrix_field(np.array([[2.0, 0.0], [0.0, 0.0]]))
        avg = ergodic_average(D, field, ANALYTIC, s_nodes=128)
        quad = box_quadrature(dim=2, n_per_axis=24)
        res = corrector_solve(D, avg, field, ANALYTIC, quad=quad)
        h = 1e-3
        lc = (group_apply(h, res.corrector, field, ANALYTIC).eval(quad.nodes)
              - group_apply(-h, res.corrector, field, ANALYTIC).eval(quad.nodes)) / (2 * h)
        recomposed = avg.average.eval(quad.nodes) + lc
        target = D.eval(quad.nodes)
        assert np.max(np.linalg.norm(recomposed - target, axis=(-2, -1))) <= 1e-4


class TestClosedForms:
    def test_gyro_closed_form_blocks(self):
        out = gyro_average_closed_form(2.0)
        assert out[0, 0] == pytest.approx(0.5)
        assert out[0, 4] == pytest.approx(-0.5)
        assert out[4, 0] == pytest.approx(-0.5)
        assert out[2, 2] == 0.0
        assert np.max(np.abs(out - out.T)) == 0.0

    def test_rotation_closed_form_parameters(self):
        out = rotation_average_closed_form(2.0, 1.0, lam1=3.0, lam2=5.0)
        np.testing.assert_allclose(out, np.diag([3.0 / 2 + 5.0 / 4, 3.0 + 5.0 / 2]))
