import dataclasses

import numpy as np
import pytest

import pidpbc.engine as engine_mod
from pidpbc import (
    ControllerState,
    LoopState,
    NoConvergenceError,
    PIDGains,
    Scenario,
    SolverAbort,
    StepperSettings,
    buck_boost_model,
    buck_boost_reference,
    closed_loop_step_dt,
    closed_loop_step_emulation,
    closed_loop_step_euler,
    run_scenario,
    scenario_hash,
    step_residuals,
    sweep,
    xi_star,
)


def make_scenario(table1, **overrides):
    base = dict(
        gains=PIDGains.from_scalars(0.1, 0.1, 6e-4),
        delta=5e-3,
        t_final=2.5,
        reference_schedule=((0.0, 35.0),),
        mode="dt-midpoint",
        params=table1,
    )
    base.update(overrides)
    return Scenario(**base)


def equilibrium_state(table1, v_star, gains):
    eq = buck_boost_reference(table1, v_star)
    return LoopState(
        k=0, x=eq.x_star.copy(), ctrl=ControllerState(xi=xi_star(gains, eq), x_prev=eq.x_star.copy())
    )


class TestScenarioValidation:
    def test_requires_exactly_one_model_source(self, table1):
        with pytest.raises(ValueError, match="exactly one"):
            make_scenario(table1, model=buck_boost_model(table1))

    def test_rejects_unknown_mode(self, table1):
        with pytest.raises(ValueError, match="mode"):
            make_scenario(table1, mode="rk4")

    def test_schedule_must_start_at_zero(self, table1):
        with pytest.raises(ValueError, match="t=0"):
            make_scenario(table1, reference_schedule=((0.5, 35.0),))

    def test_schedule_times_inside_horizon(self, table1):
        with pytest.raises(ValueError, match="within"):
            make_scenario(table1, reference_schedule=((0.0, 18.0), (2.5, 35.0)))

    def test_horizon_needs_one_step(self, table1):
        with pytest.raises(ValueError, match="at least one step"):
            make_scenario(table1, t_final=1e-3)

    def test_stepper_delta_must_match(self, table1):
        with pytest.raises(ValueError, match="stepper.delta"):
            make_scenario(table1, stepper=StepperSettings(delta=1e-3))

    def test_hash_changes_with_fields(self, table1):
        a = scenario_hash(make_scenario(table1))
        b = scenario_hash(make_scenario(table1, delta=1e-3))
        c = scenario_hash(make_scenario(table1, mode="dt-euler"))
        assert len({a, b, c}) == 3


class TestCoupledStep:
    def test_closed_loop_equilibrium_is_stationary(self, table1):
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(0.1, 0.1, 6e-4)
        eq = buck_boost_reference(table1, 35.0)
        state = equilibrium_state(table1, 35.0, gains)
        nxt, rec = closed_loop_step_dt(
            model, gains, eq, state, 5e-3, StepperSettings(delta=5e-3)
        )
        assert np.linalg.norm(nxt.x - eq.x_star) <= 1e-12
        assert np.allclose(rec.u, eq.u_star, atol=1e-12)
        assert abs(rec.dv) <= 1e-18

    def test_both_defining_relations_hold_at_solution(self, table1):
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(0.1, 0.1, 6e-4)
        eq = buck_boost_reference(table1, 35.0)
        state = LoopState(k=0, x=np.zeros(2), ctrl=ControllerState(xi=np.zeros(1)))
        settings = StepperSettings(delta=5e-3)
        for _ in range(50):
            state, rec = closed_loop_step_dt(model, gains, eq, state, 5e-3, settings)
            plant_res, ctrl_res = step_residuals(
                model, gains, eq, rec.x, rec.xi, rec.z, rec.u, 5e-3
            )
            assert plant_res <= 1e-10
            assert ctrl_res <= 1e-10

    def test_fallback_solves_newton_stall(self, table1):
        # Aggressive derivative gain with a large step puts the solution
        # branch far from the seed; the polynomial fallback must find it.
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(1e-4, 1e-4, 1e-3)
        eq = buck_boost_reference(table1, 35.0)
        state = LoopState(
            k=0,
            x=np.array([-0.00053187, -0.00880268]),
            ctrl=ControllerState(xi=np.array([-39.64933652])),
        )
        settings = StepperSettings(delta=4e-2)
        nxt, rec = closed_loop_step_dt(model, gains, eq, state, 4e-2, settings)
        plant_res, ctrl_res = step_residuals(
            model, gains, eq, rec.x, rec.xi, rec.z, rec.u, 4e-2
        )
        assert plant_res <= 1e-10 and ctrl_res <= 1e-10
        assert rec.newton_iters >= settings.newton_max_iter

    def test_lyapunov_decrease_along_run(self, table1):
        traj = run_scenario(make_scenario(table1))
        dvs = traj.column("dv")
        assert np.all(dvs <= 1e-12)
        assert abs(traj.summary.final_v - 35.0) <= 0.35


class TestEulerMode:
    def test_equilibrium_stationary(self, table1):
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(1e-4, 1e-4, 1e-3)
        eq = buck_boost_reference(table1, 18.0)
        state = equilibrium_state(table1, 18.0, gains)
        nxt, rec = closed_loop_step_euler(model, gains, eq, state, 4e-2)
        assert np.linalg.norm(nxt.x - eq.x_star) <= 1e-12
        assert np.allclose(rec.u, eq.u_star, atol=1e-10)

    def test_diverged_run_sets_flag_not_exception(self, table1):
        eq18 = buck_boost_reference(table1, 18.0)
        sc = make_scenario(
            table1,
            gains=PIDGains.from_scalars(1e-4, 1e-4, 1e-3),
            delta=6e-2,
            t_final=400.0,
            reference_schedule=((0.0, 18.0), (2.0, 35.0)),
            mode="dt-euler",
            x0=eq18.x_star,
            xi0=np.array([-4285.714285714285]),
        )
        traj = run_scenario(sc)
        assert traj.summary.diverged
        assert traj.summary.diverged_step is not None
        assert traj.summary.settling_time is None

    def test_converges_at_nominal_fig_step(self, table1):
        eq18 = buck_boost_reference(table1, 18.0)
        sc = make_scenario(
            table1,
            gains=PIDGains.from_scalars(1e-4, 1e-4, 1e-3),
            delta=4e-2,
            t_final=300.0,
            reference_schedule=((0.0, 18.0), (2.0, 35.0)),
            mode="dt-euler",
            x0=eq18.x_star,
            xi0=np.array([-4285.714285714285]),
        )
        traj = run_scenario(sc)
        assert not traj.summary.diverged
        assert abs(traj.summary.final_v - 35.0) <= 0.35


class TestEmulationMode:
    def test_equilibrium_stationary(self, table1):
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(1e-3, 1e-5, 1e-6)
        eq = buck_boost_reference(table1, 15.0)
        state = LoopState(
            k=0,
            x=eq.x_star.copy(),
            ctrl=ControllerState(xi=xi_star(gains, eq), x_prev=eq.x_star.copy()),
        )
        nxt, _ = closed_loop_step_emulation(model, gains, eq, state, 5e-5, 10)
        assert np.linalg.norm(nxt.x - eq.x_star) <= 1e-12

    def test_requires_minimum_substeps(self, table1):
        model = buck_boost_model(table1)
        gains = PIDGains.from_scalars(1e-3, 1e-5, 1e-6)
        eq = buck_boost_reference(table1, 15.0)
        state = LoopState(k=0, x=np.zeros(2), ctrl=ControllerState(xi=np.zeros(1)))
        with pytest.raises(ValueError, match="substeps"):
            closed_loop_step_emulation(model, gains, eq, state, 5e-5, 5)

    def test_bounded_short_run(self, table1):
        sc = make_scenario(
            table1,
            gains=PIDGains.from_scalars(1e-3, 1e-5, 1e-6),
            delta=1e-3,
            t_final=0.3,
            reference_schedule=((0.0, 15.0),),
            mode="emulation",
            stepper=StepperSettings(delta=1e-3, substeps=20),
        )
        traj = run_scenario(sc)
        assert not traj.summary.diverged
        assert np.all(np.isfinite(traj.column("x")))


class TestRunScenario:
    def test_minimal_horizon_single_record(self, table1):
        sc = make_scenario(table1, t_final=5e-3)
        traj = run_scenario(sc)
        assert len(traj.records) == 1
        assert traj.records[0].k == 0

    def test_reference_switch_recomputes_setpoint_keeps_integrator(self, table1):
        sc = make_scenario(
            table1, t_final=2.0, reference_schedule=((0.0, 18.0), (1.0, 35.0))
        )
        traj = run_scenario(sc)
        assert len(traj.segments) == 2
        k_switch = traj.segments[1].start_step
        assert k_switch == 200
        # integrator continuous across the boundary
        xi_before = traj.records[k_switch - 1].xi
        y_prev = traj.records[k_switch - 1].y - traj.segments[0].eq.y_star
        xi_at = traj.records[k_switch].xi
        assert np.allclose(xi_at, xi_before + sc.delta * y_prev, atol=1e-15)
        # setpoint bundle actually switched
        assert traj.segments[0].v_star == 18.0
        assert traj.segments[1].v_star == 35.0

    def test_determinism_bitwise(self, table1):
        sc = make_scenario(table1, t_final=1.0)
        t1 = run_scenario(sc)
        t2 = run_scenario(sc)
        assert np.array_equal(t1.column("x"), t2.column("x"))
        assert np.array_equal(t1.column("u"), t2.column("u"))
        assert np.array_equal(t1.column("dv"), t2.column("dv"))
        assert t1.scenario_hash == t2.scenario_hash

    def test_record_every_thins_log(self, table1):
        sc = make_scenario(table1, t_final=1.0, record_every=10)
        traj = run_scenario(sc)
        assert len(traj.records) == 20
        assert traj.records[1].k == 10

    def test_solver_failure_wrapped_with_step_index(self, table1, monkeypatch):
        def boom(*args, **kwargs):
            raise NoConvergenceError(50, 1.0)

        monkeypatch.setattr(engine_mod, "closed_loop_step_dt", boom)
        with pytest.raises(SolverAbort) as err:
            run_scenario(make_scenario(table1))
        assert err.value.step_index == 0
        assert isinstance(err.value.cause, NoConvergenceError)

    def test_duty_clamp_bounds_input_and_warns(self, table1, caplog):
        sc = make_scenario(
            table1,
            gains=PIDGains.from_scalars(5.0, 5.0, 0.0),
            mode="emulation",
            t_final=0.1,
            delta=1e-3,
            stepper=StepperSettings(delta=1e-3, substeps=20),
            reference_schedule=((0.0, 35.0),),
            clamp_duty=True,
        )
        with caplog.at_level("WARNING"):
            traj = run_scenario(sc)
        us = traj.column("u")
        assert np.all(us >= 0.0) and np.all(us <= 1.0)
        assert any("clamp" in rec.message for rec in caplog.records)


class TestSweep:
    def test_single_value_matches_run_scenario(self, table1):
        sc = make_scenario(table1, t_final=1.0)
        results = sweep(sc, "delta", [5e-3])
        direct = run_scenario(sc)
        assert results[0].error is None
        assert np.array_equal(results[0].trajectory.column("x"), direct.column("x"))

    def test_delta_axis_settling_nondecreasing(self, table1):
        sc = make_scenario(table1, t_final=3.0)
        results = sweep(sc, "delta", [1e-3, 5e-3, 2e-2])
        settles = [r.summary.settling_time for r in results]
        assert all(s is not None for s in settles)
        assert all(a <= b + 1e-12 for a, b in zip(settles, settles[1:]))

    def test_gains_axis_accepts_triples(self, table1):
        sc = make_scenario(table1, t_final=1.0)
        results = sweep(sc, "gains", [(0.05, 0.05, 6e-4), (0.5, 0.5, 6e-4)])
        assert all(r.error is None for r in results)

    def test_sibling_failure_isolated(self, table1):
        sc = make_scenario(table1, t_final=1.0)
        results = sweep(sc, "delta", [5e-3, -1.0, 1e-2])
        assert results[0].error is None
        assert results[1].error is not None and results[1].trajectory is None
        assert results[2].error is None

    def test_empty_values_rejected(self, table1):
        with pytest.raises(ValueError, match="empty"):
            sweep(make_scenario(table1), "delta", [])

    def test_unknown_axis_rejected(self, table1):
        with pytest.raises(ValueError, match="axis"):
            sweep(make_scenario(table1), "load", [1.0])

    def test_reference_axis(self, table1):
        sc = make_scenario(table1, t_final=4.0)
        results = sweep(sc, "reference", [18.0, 35.0])
        finals = [r.summary.final_v for r in results]
        assert abs(finals[0] - 18.0) <= 0.18
        assert abs(finals[1] - 35.0) <= 0.35

    def test_concurrent_execution_matches_serial(self, table1, monkeypatch):
        sc = make_scenario(table1, t_final=1.0)
        serial = sweep(sc, "delta", [2e-3, 5e-3])
        monkeypatch.setenv(engine_mod.SWEEP_WORKERS_ENV, "2")
        parallel = sweep(sc, "delta", [2e-3, 5e-3])
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.trajectory.column("x"), b.trajectory.column("x"))
