import numpy as np
import pytest

from pidpbc import (
    NoConvergenceError,
    SingularJacobianError,
    SingularStepMatrixError,
    StepperSettings,
    build_NM,
    buck_boost_model,
    buck_boost_reference,
    damped_newton,
    euler_step,
    eval_drift,
    hamiltonian,
    midpoint_step_explicit,
    midpoint_step_newton,
    reference_trajectory,
)

from conftest import random_bilinear_model


class TestSettings:
    def test_defaults(self):
        s = StepperSettings(delta=1e-3)
        assert s.newton_tol == 1e-12 and s.newton_max_iter == 50 and s.substeps == 100

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(delta=0.0),
            dict(delta=-1e-3),
            dict(delta=1e-3, newton_tol=0.0),
            dict(delta=1e-3, newton_max_iter=0),
            dict(delta=1e-3, substeps=0),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            StepperSettings(**kwargs)


class TestSystemMatrices:
    def test_open_switch_matrices(self, table1):
        model = buck_boost_model(table1)
        n_mat, m_mat = build_NM(model, np.array([0.0]))
        assert np.array_equal(n_mat, np.array([[0.0, -1.0], [1.0, -1.0 / 60.0]]))
        assert np.array_equal(m_mat, np.zeros((2, 2)))

    def test_symmetric_part_is_dissipation(self, table1):
        model = buck_boost_model(table1)
        rng = np.random.default_rng(3)
        for _ in range(20):
            u = rng.normal(size=1)
            n_mat, _ = build_NM(model, u)
            assert np.allclose(n_mat + n_mat.T, -2.0 * model.R, atol=1e-15)

    def test_off_diagonals_scale_with_duty(self, table1):
        model = buck_boost_model(table1)
        u = buck_boost_reference(table1, 35.0).u_star
        n_mat, _ = build_NM(model, u)
        assert np.allclose(
            n_mat, np.array([[0.0, -(1 - u[0])], [1 - u[0], -1.0 / 60.0]])
        )


class TestMidpointStep:
    def test_fixed_point_at_equilibrium(self, table1):
        model = buck_boost_model(table1)
        eq = buck_boost_reference(table1, 35.0)
        x_next = midpoint_step_explicit(model, eq.x_star, eq.u_star, 5e-3)
        assert np.linalg.norm(x_next - eq.x_star) <= 1e-15

    def test_explicit_agrees_with_newton_table_case(self, table1):
        model = buck_boost_model(table1)
        x_exp = midpoint_step_explicit(model, np.zeros(2), np.array([0.5]), 5e-3)
        x_newton, z, iters = midpoint_step_newton(
            model, np.zeros(2), np.array([0.5]), 5e-3
        )
        assert np.linalg.norm(x_exp - x_newton) <= 1e-10
        assert np.allclose(z, 0.5 * (np.zeros(2) + x_newton), atol=1e-12)

    def test_step_matrix_determinant_closed_form(self, table1):
        # det(I - (d/2) N Q) = 1 + d/(2 r C) + (d/2)^2 (1-u)^2/(L C)
        model = buck_boost_model(table1)
        rng = np.random.default_rng(5)
        for _ in range(20):
            u, delta = rng.normal(), rng.uniform(1e-4, 0.1)
            n_mat, _ = build_NM(model, np.array([u]))
            det = np.linalg.det(np.eye(2) - 0.5 * delta * (n_mat @ model.Q))
            closed = (
                1.0
                + delta / (2 * 60.0 * 330e-6)
                + (delta / 2) ** 2 * (1 - u) ** 2 / (1e-3 * 330e-6)
            )
            assert abs(det - closed) <= 1e-9 * closed
            assert closed > 0.0

    def test_newton_at_equilibrium_converges_immediately(self, table1):
        model = buck_boost_model(table1)
        eq = buck_boost_reference(table1, 18.0)
        x_next, z, iters = midpoint_step_newton(model, eq.x_star, eq.u_star, 1e-2)
        assert iters <= 1
        assert np.linalg.norm(z - eq.x_star) <= 1e-12

    def test_cross_oracle_random_draws(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            model = random_bilinear_model(rng, n=3, m=2)
            x = rng.normal(size=3)
            u = rng.normal(size=2)
            delta = rng.uniform(1e-4, 1e-2)
            a = midpoint_step_explicit(model, x, u, delta)
            b, _, _ = midpoint_step_newton(model, x, u, delta)
            assert np.linalg.norm(a - b) <= 1e-10 * (1.0 + np.linalg.norm(x))

    def test_singular_step_matrix_error_path(self, table1):
        # For valid models and delta > 0 the step matrix is provably
        # nonsingular (N Q has no eigenvalue with positive real part), so
        # the error path is exercised with a contrived negative delta:
        # u = 1 makes N Q = diag(0, -1/(r C)) and delta = -2 r C zeroes one
        # eigenvalue of the step matrix.
        model = buck_boost_model(table1)
        delta = -2.0 * 60.0 * 330e-6
        with pytest.raises(SingularStepMatrixError):
            midpoint_step_explicit(model, np.array([1e-3, 1e-3]), np.array([1.0]), delta)


class TestNewtonKernel:
    def test_singular_jacobian_raises(self):
        def residual(z):
            return np.array([z[0] ** 2 - 1.0, z[0] * z[1]])

        def jacobian(z):
            return np.array([[2 * z[0], 0.0], [z[1], z[0]]])

        with pytest.raises(SingularJacobianError):
            damped_newton(residual, jacobian, np.zeros(2), 1e-12, 20)

    def test_rootless_problem_reports_no_convergence(self):
        def residual(z):
            return np.array([z[0] ** 2 + 1.0])

        def jacobian(z):
            return np.array([[2 * z[0]]])

        with pytest.raises((NoConvergenceError, SingularJacobianError)):
            damped_newton(residual, jacobian, np.array([2.0]), 1e-12, 15)

    def test_converges_on_smooth_problem(self):
        def residual(z):
            return np.array([np.cos(z[0]) - z[0]])

        def jacobian(z):
            return np.array([[-np.sin(z[0]) - 1.0]])

        root, iters = damped_newton(residual, jacobian, np.array([1.0]), 1e-14, 50)
        assert abs(np.cos(root[0]) - root[0]) <= 1e-14
        assert iters <= 10


class TestEulerStep:
    def test_fixed_point_at_equilibrium(self, table1):
        model = buck_boost_model(table1)
        eq = buck_boost_reference(table1, 22.0)
        x_next = euler_step(model, eq.x_star, eq.u_star, 1e-2)
        assert np.linalg.norm(x_next - eq.x_star) <= 1e-15

    def test_one_step_gap_to_midpoint_is_second_order(self, table1):
        # ||euler - midpoint|| over one step scales as delta^2: halving
        # delta shrinks the gap by about 4.
        model = buck_boost_model(table1)
        x0 = np.array([1e-3, 5e-3])
        u = np.array([0.4])
        gaps = []
        for delta in (2e-4, 1e-4):
            gap = np.linalg.norm(
                euler_step(model, x0, u, delta)
                - midpoint_step_explicit(model, x0, u, delta)
            )
            gaps.append(gap)
        ratio = gaps[1] / gaps[0]
        assert 0.15 <= ratio <= 0.35


class TestReferenceIntegrator:
    def test_constant_input_at_equilibrium_is_constant(self, table1):
        model = buck_boost_model(table1)
        eq = buck_boost_reference(table1, 35.0)
        us = np.tile(eq.u_star, (50, 1))
        traj = reference_trajectory(model, eq.x_star, us, 1e-3, substeps=10)
        assert np.max(np.abs(traj - eq.x_star)) <= 1e-12

    def test_richardson_fourth_order(self, table1):
        model = buck_boost_model(table1)
        us = np.full((40, 1), 0.5)
        x0 = np.zeros(2)
        fine = reference_trajectory(model, x0, us, 1e-3, substeps=160)[-1]
        err5 = np.linalg.norm(reference_trajectory(model, x0, us, 1e-3, substeps=5)[-1] - fine)
        err10 = np.linalg.norm(reference_trajectory(model, x0, us, 1e-3, substeps=10)[-1] - fine)
        assert 8.0 <= err5 / err10 <= 32.0

    def test_free_response_dissipates_energy(self, table1):
        model = buck_boost_model(table1)
        us = np.zeros((200, 1))
        traj = reference_trajectory(model, np.array([1e-3, 0.0]), us, 1e-4, substeps=10)
        energies = [hamiltonian(model, x) for x in traj]
        diffs = np.diff(energies)
        assert np.all(diffs <= 1e-15)

    def test_rejects_bad_substeps(self, table1):
        model = buck_boost_model(table1)
        with pytest.raises(ValueError):
            reference_trajectory(model, np.zeros(2), np.zeros((3, 1)), 1e-3, substeps=0)


class TestStructuralProperties:
    def test_equilibrium_preserved_to_machine_precision(self, table1):
        model = buck_boost_model(table1)
        for v in (5.0, 18.0, 35.0):
            eq = buck_boost_reference(table1, v)
            x = eq.x_star
            for _ in range(100):
                x = midpoint_step_explicit(model, x, eq.u_star, 2e-2)
            assert np.linalg.norm(x - eq.x_star) <= 1e-12 * max(
                1.0, np.linalg.norm(eq.x_star)
            )

    def test_global_second_order_against_reference(self, table1):
        # Fixed smooth input sequence, error at the final time vs the fine
        # integrator shrinks by ~4x when delta halves.
        model = buck_boost_model(table1)
        t_final = 0.5

        def u_of(t):
            return np.array([0.45 + 0.1 * np.sin(2 * np.pi * t)])

        def final_error(delta):
            steps = int(round(t_final / delta))
            us = np.array([u_of(k * delta) for k in range(steps)])
            x = np.zeros(2)
            for k in range(steps):
                x = midpoint_step_explicit(model, x, us[k], delta)
            ref = reference_trajectory(model, np.zeros(2), us, delta, substeps=20)[-1]
            return np.linalg.norm(x - ref)

        delta = 6.25e-5
        ratio = final_error(delta) / final_error(delta / 2)
        assert 3.5 <= ratio <= 4.5

    def test_unforced_shifted_dissipation_identity(self, table1):
        # With the input held at u* the per-step energy balance reduces to
        # (1/d) dH = -z_err^T Q R Q z_err <= 0.
        model = buck_boost_model(table1)
        eq = buck_boost_reference(table1, 20.0)
        delta = 2e-3
        x = np.array([2e-3, 8e-3])
        for _ in range(200):
            x_next = midpoint_step_explicit(model, x, eq.u_star, delta)
            z = 0.5 * (x + x_next)
            dh = (
                0.5 * (x_next - eq.x_star) @ (model.Q @ (x_next - eq.x_star))
                - 0.5 * (x - eq.x_star) @ (model.Q @ (x - eq.x_star))
            ) / delta
            qz = model.Q @ (z - eq.x_star)
            rhs = -float(qz @ (model.R @ qz))
            assert abs(dh - rhs) <= 1e-12 * max(1.0, abs(dh), abs(rhs))
            assert dh <= 1e-15
            x = x_next
