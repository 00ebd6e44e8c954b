"""Closed-loop steppers, scenario execution, and trajectory logging.

Three loop modes are provided:

* ``dt-midpoint`` -- plant and controller discretized together; the coupled
  implicit relations reduce to a single root-find in the midpoint state
  z_k, so each step solves one n-dimensional nonlinear system.
* ``dt-euler``    -- forward Euler on the plant with the sample-based PID
  (backward-difference derivative term), the classical emulation baseline.
* ``emulation``   -- digital controller at the sample instants driving a
  finely integrated continuous plant under zero-order hold.

Each step logs shifted energy, controller storage, the Lyapunov value
V = (H + H_c)/delta, and its per-step change, so certificate checks can run
offline on the recorded trajectory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerState, PIDGains, ct_pid_derivative, xi_star
from .discretize import StepperSettings, _rk4_hold, build_NM, damped_newton
from .errors import NoConvergenceError, PidPbcError, SingularJacobianError
from .model import (
    BilinearPHModel,
    BuckBoostParams,
    EquilibriumSpec,
    buck_boost_model,
    buck_boost_reference,
    eval_drift,
    eval_input_matrix,
    make_equilibrium,
    shifted_storage,
)
from .controller import controller_storage

logger = logging.getLogger(__name__)

MODES = ("dt-midpoint", "dt-euler", "emulation")

SWEEP_WORKERS_ENV = "PIDPBC_SWEEP_WORKERS"


class SolverAbort(PidPbcError):
    """A closed-loop step failed; carries the step index and wall time."""

    def __init__(self, step_index: int, elapsed_s: float, cause: Exception):
        self.step_index = step_index
        self.elapsed_s = elapsed_s
        self.cause = cause
        super().__init__(f"step {step_index} failed after {elapsed_s:.3f}s: {cause}")


@dataclass
class LoopState:
    """Mutable per-run state: step index, plant state, controller memory."""

    k: int
    x: np.ndarray
    ctrl: ControllerState


@dataclass(frozen=True)
class StepRecord:
    """Per-step log entry; z is None outside dt-midpoint mode."""

    k: int
    t: float
    x: np.ndarray
    z: np.ndarray | None
    u: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    h: float
    h_c: float
    v_lyap: float
    dv: float
    newton_iters: int


@dataclass(frozen=True)
class Segment:
    """Constant-reference stretch of a run."""

    start_step: int
    v_star: float | None
    eq: EquilibriumSpec


@dataclass(frozen=True)
class RunSummary:
    final_v: float
    settling_time: float | None
    overshoot: float
    max_abs_u: float
    min_dv: float
    max_dv: float
    diverged: bool
    diverged_step: int | None
    steps: int


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop run."""

    gains: PIDGains
    delta: float
    t_final: float
    reference_schedule: tuple
    mode: str = "dt-midpoint"
    params: BuckBoostParams | None = None
    model: BilinearPHModel | None = None
    x0: np.ndarray | None = None
    xi0: np.ndarray | None = None
    stepper: StepperSettings | None = None
    record_every: int = 1
    blowup_norm: float = 1e6
    clamp_duty: bool = False

    def __post_init__(self):
        if (self.params is None) == (self.model is None):
            raise ValueError("provide exactly one of params or model")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not np.isfinite(self.delta) or self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if self.t_final < self.delta:
            raise ValueError("t_final must allow at least one step")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        schedule = tuple(
            (float(t), v if np.ndim(v) else float(v))
            for t, v in self.reference_schedule
        )
        if not schedule:
            raise ValueError("reference schedule must not be empty")
        if schedule[0][0] != 0.0:
            raise ValueError("first schedule entry must be at t=0")
        times = [t for t, _ in schedule]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be nondecreasing")
        if times[-1] >= self.t_final:
            raise ValueError("schedule times must lie within [0, t_final)")
        if self.stepper is not None and self.stepper.delta != self.delta:
            raise ValueError("stepper.delta must match scenario delta")
        object.__setattr__(self, "reference_schedule", schedule)

    def settings(self) -> StepperSettings:
        if self.stepper is not None:
            return self.stepper
        return StepperSettings(delta=self.delta)

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.delta))


@dataclass(frozen=True)
class Trajectory:
    mode: str
    delta: float
    records: tuple[StepRecord, ...]
    final_x: np.ndarray
    final_xi: np.ndarray
    segments: tuple[Segment, ...]
    summary: RunSummary
    scenario_hash: str
    params: BuckBoostParams | None
    record_every: int

    def column(self, name: str) -> np.ndarray:
        """Stack one StepRecord field over all records."""
        return np.array([getattr(r, name) for r in self.records])

    def segment_of(self, k: int) -> Segment:
        active = self.segments[0]
        for seg in self.segments:
            if seg.start_step <= k:
                active = seg
            else:
                break
        return active


def scenario_hash(scenario: Scenario) -> str:
    """Stable short hash of every field that affects the trajectory."""

    def fmt(a) -> str:
        return ",".join(f"{v:.17g}" for v in np.atleast_1d(np.asarray(a, float)).ravel())

    parts = [f"mode={scenario.mode}", f"delta={scenario.delta:.17g}"]
    parts.append(f"t_final={scenario.t_final:.17g}")
    if scenario.params is not None:
        p = scenario.params
        parts.append(
            "buckboost="
            + fmt([p.v_in, p.inductance, p.capacitance, p.load_resistance])
        )
    else:
        m = scenario.model
        parts.append(
            "model="
            + "|".join(
                fmt(a)
                for a in (m.Q, m.J0, *m.Ji, m.R, m.G0, *m.Gi, m.E)
            )
        )
    g = scenario.gains
    parts.append("gains=" + "|".join(fmt(a) for a in (g.k_p, g.k_i, g.k_d)))
    parts.append(
        "schedule="
        + ";".join(f"{t:.17g}:{fmt(v)}" for t, v in scenario.reference_schedule)
    )
    parts.append("x0=" + ("0" if scenario.x0 is None else fmt(scenario.x0)))
    parts.append("xi0=" + ("0" if scenario.xi0 is None else fmt(scenario.xi0)))
    s = scenario.settings()
    parts.append(
        f"solver={s.newton_tol:.17g},{s.newton_max_iter},{s.substeps}"
    )
    parts.append(f"record_every={scenario.record_every}")
    parts.append(f"blowup={scenario.blowup_norm:.17g}")
    parts.append(f"clamp={int(scenario.clamp_duty)}")
    digest = hashlib.sha256("&".join(parts).encode()).hexdigest()
    return digest[:16]


def _energies(
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec,
    xi_ref: np.ndarray,
    x: np.ndarray,
    xi: np.ndarray,
    delta: float,
) -> tuple[float, float, float]:
    h = shifted_storage(model, x, eq.x_star)
    h_c = controller_storage(gains, eq, xi, x, xi_ref=xi_ref)
    return h, h_c, (h + h_c) / delta


def _coupled_root_scalar(
    model: BilinearPHModel,
    x_k: np.ndarray,
    u_of,
    delta: float,
    settings: StepperSettings,
) -> tuple[np.ndarray, int]:
    """Exact solve of the coupled step for single-input models.

    For a held scalar input the midpoint state is z(u) = S(u)^{-1} rhs(u)
    with S(u) = I - (d/2) N(u) Q, so the controller consistency condition
    u = u_of(z(u)) clears to a polynomial of degree n+1 in u.  All real
    roots are recovered, polished with a few Newton iterations on the full
    vector residual, and the branch closest to x_k is returned.
    """
    deg = model.n + 1
    nodes = np.linspace(-3.0, 3.0, deg + 1)
    samples = []
    for u_node in nodes:
        n_mat, m_mat = build_NM(model, np.array([u_node]))
        s_mat = np.eye(model.n) - 0.5 * delta * (n_mat @ model.Q)
        z_node = np.linalg.solve(s_mat, x_k + 0.5 * delta * (m_mat @ model.E))
        phi = u_node - float(u_of(z_node)[0])
        samples.append(phi * np.linalg.det(s_mat))
    coeffs = np.polyfit(nodes, samples, deg)
    scale = np.abs(coeffs).max()
    if scale == 0.0:
        raise NoConvergenceError(settings.newton_max_iter, float("nan"))
    while coeffs.size > 1 and abs(coeffs[0]) < 1e-12 * scale:
        coeffs = coeffs[1:]
    candidates = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-9 * (1.0 + abs(root.real)):
            continue
        u_r = np.array([float(root.real)])
        n_mat, m_mat = build_NM(model, u_r)
        s_mat = np.eye(model.n) - 0.5 * delta * (n_mat @ model.Q)
        z_r = np.linalg.solve(s_mat, x_k + 0.5 * delta * (m_mat @ model.E))
        candidates.append(z_r)
    candidates.sort(key=lambda z: float(np.linalg.norm(z - x_k)))
    for z_r in candidates:

        def residual(z: np.ndarray) -> np.ndarray:
            u = u_of(z)
            return z - x_k - 0.5 * delta * (
                eval_drift(model, z) + eval_input_matrix(model, z) @ u
            )

        def jacobian(z: np.ndarray) -> np.ndarray:
            return _coupled_jacobian(model, z, u_of, delta)

        try:
            return damped_newton(
                residual, jacobian, z_r, settings.newton_tol, max_iter=10
            )
        except (NoConvergenceError, SingularJacobianError):
            continue
    raise NoConvergenceError(settings.newton_max_iter, float("nan"))


def _coupled_jacobian(model, z, u_of, delta, du=None):
    u = u_of(z)
    n_mat = model.J0 - model.R
    for i in range(model.m):
        n_mat = n_mat + u[i] * model.Ji[i]
    jac = np.eye(model.n) - 0.5 * delta * (n_mat @ model.Q)
    if du is not None:
        jac = jac - 0.5 * delta * (eval_input_matrix(model, z) @ du)
    return jac


def closed_loop_step_dt(
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec,
    state: LoopState,
    delta: float,
    settings: StepperSettings,
    clamp_duty: bool = False,
) -> tuple[LoopState, StepRecord]:
    """Exact DT-DT step: plant midpoint relation and PID solved together.

    Substituting the integrator update and dx_k = 2(z_k - x_k) into the PID
    law leaves a single nonlinear equation in z_k,

        z = x_k + (d/2) [f(z) + g(z) u(z)],
        u(z) = -(K_P + (d/2) K_I)(C z - y*) - K_I xi_k - (2/d) K_D C (z - x_k),

    solved by damped Newton seeded at x_k.  If Newton stalls (the solution
    branch can sit far from x_k for aggressive derivative gains and large
    sampling times) single-input models fall back to an exact polynomial
    solve; iteration counts above newton_max_iter flag that path.
    """
    x_k = state.x
    xi_k = state.ctrl.xi
    c_mat = eq.C_mat
    kpi = gains.k_p + 0.5 * delta * gains.k_i
    kdc = (2.0 / delta) * (gains.k_d @ c_mat)
    u_bias = -gains.k_i @ xi_k + kpi @ eq.y_star + kdc @ x_k
    du = -(kpi @ c_mat) - kdc

    def u_of(z: np.ndarray) -> np.ndarray:
        u = u_bias + du @ z
        if clamp_duty:
            u = np.clip(u, 0.0, 1.0)
        return u

    def residual(z: np.ndarray) -> np.ndarray:
        u = u_of(z)
        return z - x_k - 0.5 * delta * (
            eval_drift(model, z) + eval_input_matrix(model, z) @ u
        )

    def jacobian(z: np.ndarray) -> np.ndarray:
        u = u_of(z)
        feedback = du if not clamp_duty or np.all((u > 0.0) & (u < 1.0)) else None
        return _coupled_jacobian(model, z, u_of, delta, du=feedback)

    try:
        z, iters = damped_newton(
            residual, jacobian, x_k, settings.newton_tol, settings.newton_max_iter
        )
    except (NoConvergenceError, SingularJacobianError):
        if model.m != 1 or clamp_duty:
            raise
        z, polish = _coupled_root_scalar(model, x_k, u_of, delta, settings)
        iters = settings.newton_max_iter + polish
    u_k = u_of(z)
    y_k = c_mat @ z
    y_tilde = y_k - eq.y_star
    x_next = 2.0 * z - x_k
    xi_next = xi_k + delta * y_tilde

    xi_ref = xi_star(gains, eq)
    h, h_c, v0 = _energies(model, gains, eq, xi_ref, x_k, xi_k, delta)
    _, _, v1 = _energies(model, gains, eq, xi_ref, x_next, xi_next, delta)
    record = StepRecord(
        k=state.k,
        t=state.k * delta,
        x=x_k,
        z=z,
        u=u_k,
        y=y_k,
        xi=xi_k,
        h=h,
        h_c=h_c,
        v_lyap=v0,
        dv=v1 - v0,
        newton_iters=iters,
    )
    next_state = LoopState(
        k=state.k + 1, x=x_next, ctrl=ControllerState(xi=xi_next, x_prev=x_k)
    )
    return next_state, record


def closed_loop_step_euler(
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec,
    state: LoopState,
    delta: float,
    clamp_duty: bool = False,
) -> tuple[LoopState, StepRecord]:
    """Euler-everywhere step: sampled output, explicit plant update.

    The derivative term uses the forward difference consistent with the
    plant update, C (x_{k+1} - x_k)/delta = C [f(x_k) + g(x_k) u_k], which
    makes u_k the solution of a small linear system,

        [I + K_D C g(x_k)] u_k = -(K_P + (d/2) K_I)(C x_k - y*)
                                 - K_I xi_k - K_D C f(x_k).

    A backward difference would apply the (large) derivative gain one
    sample late and destabilizes this baseline at every sampling time,
    which contradicts its observed marginal-stability behavior.
    """
    x_k = state.x
    xi_k = state.ctrl.xi
    y_k = eq.C_mat @ x_k
    y_tilde = y_k - eq.y_star
    drift = eval_drift(model, x_k)
    g_x = eval_input_matrix(model, x_k)
    lhs = np.eye(model.m) + gains.k_d @ (eq.C_mat @ g_x)
    rhs = (
        -(gains.k_p + 0.5 * delta * gains.k_i) @ y_tilde
        - gains.k_i @ xi_k
        - gains.k_d @ (eq.C_mat @ drift)
    )
    u_k = np.linalg.solve(lhs, rhs)
    xi_next = xi_k + delta * y_tilde
    if clamp_duty:
        u_k = np.clip(u_k, 0.0, 1.0)
    x_next = x_k + delta * (drift + g_x @ u_k)

    xi_ref = xi_star(gains, eq)
    h, h_c, v0 = _energies(model, gains, eq, xi_ref, x_k, xi_k, delta)
    _, _, v1 = _energies(model, gains, eq, xi_ref, x_next, xi_next, delta)
    record = StepRecord(
        k=state.k,
        t=state.k * delta,
        x=x_k,
        z=None,
        u=u_k,
        y=y_k,
        xi=xi_k,
        h=h,
        h_c=h_c,
        v_lyap=v0,
        dv=v1 - v0,
        newton_iters=0,
    )
    next_state = LoopState(
        k=state.k + 1, x=x_next, ctrl=ControllerState(xi=xi_next, x_prev=x_k)
    )
    return next_state, record


def closed_loop_step_emulation(
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec,
    state: LoopState,
    delta: float,
    substeps: int,
    clamp_duty: bool = False,
) -> tuple[LoopState, StepRecord]:
    """Sampled-data step: CT PID emulated at the samples (forward-Euler
    integrator, backward-difference output derivative) driving the finely
    integrated plant under zero-order hold."""
    if substeps < 10:
        raise ValueError("emulation mode requires substeps >= 10")
    x_k = state.x
    xi_k = state.ctrl.xi
    x_prev = state.ctrl.x_prev if state.ctrl.x_prev is not None else x_k
    y_k = eq.C_mat @ x_k
    y_tilde = y_k - eq.y_star
    y_tilde_dot = (eq.C_mat @ (x_k - x_prev)) / delta
    u_k, xi_dot = ct_pid_derivative(gains, eq, xi_k, y_tilde, y_tilde_dot)
    if clamp_duty:
        u_k = np.clip(u_k, 0.0, 1.0)
    xi_next = xi_k + delta * xi_dot
    x_next = _rk4_hold(model, x_k, u_k, delta, substeps)

    xi_ref = xi_star(gains, eq)
    h, h_c, v0 = _energies(model, gains, eq, xi_ref, x_k, xi_k, delta)
    _, _, v1 = _energies(model, gains, eq, xi_ref, x_next, xi_next, delta)
    record = StepRecord(
        k=state.k,
        t=state.k * delta,
        x=x_k,
        z=None,
        u=u_k,
        y=y_k,
        xi=xi_k,
        h=h,
        h_c=h_c,
        v_lyap=v0,
        dv=v1 - v0,
        newton_iters=0,
    )
    next_state = LoopState(
        k=state.k + 1, x=x_next, ctrl=ControllerState(xi=xi_next, x_prev=x_k)
    )
    return next_state, record


def _build_segments(scenario: Scenario, model: BilinearPHModel) -> list[Segment]:
    segments: list[Segment] = []
    for t_change, value in scenario.reference_schedule:
        k_start = int(round(t_change / scenario.delta))
        if np.ndim(value):
            eq = make_equilibrium(model, np.asarray(value, dtype=float))
            v_star = None
        else:
            if scenario.params is None:
                raise ValueError(
                    "scalar reference values require buck-boost params"
                )
            eq = buck_boost_reference(scenario.params, float(value))
            v_star = float(value)
        if segments and k_start <= segments[-1].start_step:
            raise ValueError("schedule entries must map to distinct sample instants")
        segments.append(Segment(start_step=k_start, v_star=v_star, eq=eq))
    return segments


def _capacitor_voltage(params: BuckBoostParams | None, x: np.ndarray) -> float:
    if params is None:
        return float("nan")
    return float(x[1] / params.capacitance)


def _summarize(
    scenario: Scenario,
    records: list[StepRecord],
    final_x: np.ndarray,
    segments: list[Segment],
    diverged_step: int | None,
) -> RunSummary:
    params = scenario.params
    final_v = _capacitor_voltage(params, final_x)
    last_seg = segments[-1]
    t_ref = last_seg.start_step * scenario.delta
    settling = None
    overshoot = float("nan")
    if params is not None and last_seg.v_star is not None and diverged_step is None:
        target = last_seg.v_star
        ts = np.array([r.t for r in records] + [scenario.steps * scenario.delta])
        vs = np.array(
            [_capacitor_voltage(params, r.x) for r in records]
            + [_capacitor_voltage(params, final_x)]
        )
        tail = ts >= t_ref
        ts, vs = ts[tail], vs[tail]
        if target > 0.0:
            band = 0.01 * abs(target)
            inside = np.abs(vs - target) <= band
            if inside.size and inside[-1]:
                bad = np.flatnonzero(~inside)
                first_ok = 0 if bad.size == 0 else bad[-1] + 1
                settling = float(ts[first_ok] - t_ref)
        overshoot = float(max(0.0, vs.max() - target)) if vs.size else float("nan")
    dvs = np.array([r.dv for r in records]) if records else np.array([np.nan])
    us = (
        np.array([np.abs(r.u).max() for r in records])
        if records
        else np.array([np.nan])
    )
    return RunSummary(
        final_v=final_v,
        settling_time=settling,
        overshoot=overshoot,
        max_abs_u=float(us.max()),
        min_dv=float(dvs.min()),
        max_dv=float(dvs.max()),
        diverged=diverged_step is not None,
        diverged_step=diverged_step,
        steps=len(records),
    )


def run_scenario(scenario: Scenario) -> Trajectory:
    """Execute a scenario and return its logged trajectory.

    Reference changes take effect exactly at their sample instant; the
    integrator state carries over while the setpoint bundle is recomputed.
    Trajectories are deterministic functions of the scenario.
    """
    model = scenario.model if scenario.model is not None else buck_boost_model(
        scenario.params
    )
    settings = scenario.settings()
    segments = _build_segments(scenario, model)
    if scenario.clamp_duty:
        logger.warning(
            "duty-ratio clamp active: passivity/stability certificates do not apply"
        )

    x0 = (
        np.zeros(model.n)
        if scenario.x0 is None
        else np.asarray(scenario.x0, dtype=float)
    )
    xi0 = (
        np.zeros(model.m)
        if scenario.xi0 is None
        else np.atleast_1d(np.asarray(scenario.xi0, dtype=float))
    )
    if x0.shape != (model.n,):
        raise ValueError(f"x0 must have length {model.n}")
    if xi0.shape != (model.m,):
        raise ValueError(f"xi0 must have length {model.m}")

    state = LoopState(k=0, x=x0, ctrl=ControllerState(xi=xi0, x_prev=x0))
    records: list[StepRecord] = []
    diverged_step: int | None = None
    seg_idx = 0
    started = time.monotonic()

    for k in range(scenario.steps):
        while seg_idx + 1 < len(segments) and segments[seg_idx + 1].start_step <= k:
            seg_idx += 1
        eq = segments[seg_idx].eq
        try:
            if scenario.mode == "dt-midpoint":
                state, record = closed_loop_step_dt(
                    model, scenario.gains, eq, state, scenario.delta, settings,
                    clamp_duty=scenario.clamp_duty,
                )
            elif scenario.mode == "dt-euler":
                state, record = closed_loop_step_euler(
                    model, scenario.gains, eq, state, scenario.delta,
                    clamp_duty=scenario.clamp_duty,
                )
            else:
                state, record = closed_loop_step_emulation(
                    model, scenario.gains, eq, state, scenario.delta,
                    settings.substeps, clamp_duty=scenario.clamp_duty,
                )
        except PidPbcError as exc:
            raise SolverAbort(k, time.monotonic() - started, exc) from exc
        if k % scenario.record_every == 0:
            records.append(record)
        norm = float(np.linalg.norm(state.x))
        if not np.isfinite(norm) or norm > scenario.blowup_norm:
            diverged_step = k
            break

    summary = _summarize(scenario, records, state.x, segments, diverged_step)
    return Trajectory(
        mode=scenario.mode,
        delta=scenario.delta,
        records=tuple(records),
        final_x=state.x,
        final_xi=state.ctrl.xi,
        segments=tuple(segments),
        summary=summary,
        scenario_hash=scenario_hash(scenario),
        params=scenario.params,
        record_every=scenario.record_every,
    )


def step_residuals(
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec,
    x_k: np.ndarray,
    xi_k: np.ndarray,
    z: np.ndarray,
    u: np.ndarray,
    delta: float,
) -> tuple[float, float]:
    """Norms of both defining relations of the coupled DT step at (z, u)."""
    plant = z - x_k - 0.5 * delta * (
        eval_drift(model, z) + eval_input_matrix(model, z) @ u
    )
    y_tilde = eq.C_mat @ z - eq.y_star
    kpi = gains.k_p + 0.5 * delta * gains.k_i
    ctrl = u - (
        -kpi @ y_tilde
        - gains.k_i @ xi_k
        - (2.0 / delta) * (gains.k_d @ (eq.C_mat @ (z - x_k)))
    )
    return float(np.linalg.norm(plant)), float(np.linalg.norm(ctrl))


@dataclass(frozen=True)
class SweepResult:
    """Outcome of one sweep run; trajectory is None when the run errored."""

    value: object
    trajectory: Trajectory | None
    error: str | None

    @property
    def summary(self) -> RunSummary | None:
        return None if self.trajectory is None else self.trajectory.summary


def _apply_axis(scenario: Scenario, axis: str, value) -> Scenario:
    if axis == "delta":
        delta = float(value)
        stepper = scenario.stepper
        if stepper is not None:
            stepper = dataclasses.replace(stepper, delta=delta)
        return dataclasses.replace(scenario, delta=delta, stepper=stepper)
    if axis == "gains":
        gains = value
        if not isinstance(gains, PIDGains):
            gains = PIDGains.from_scalars(*value)
        return dataclasses.replace(scenario, gains=gains)
    if axis == "reference":
        return dataclasses.replace(
            scenario, reference_schedule=((0.0, float(value)),)
        )
    raise ValueError(f"unknown sweep axis {axis!r}")


def sweep(scenario_template: Scenario, axis: str, values) -> list[SweepResult]:
    """Independent runs along one axis; failures never abort siblings.

    Runs execute concurrently when the PIDPBC_SWEEP_WORKERS environment
    variable asks for more than one worker; results keep input order.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep values must not be empty")
    if axis not in ("delta", "gains", "reference"):
        raise ValueError(f"unknown sweep axis {axis!r}")

    def one(value) -> SweepResult:
        try:
            sc = _apply_axis(scenario_template, axis, value)
            return SweepResult(value=value, trajectory=run_scenario(sc), error=None)
        except Exception as exc:  # isolated by contract
            logger.warning("sweep run %r failed: %s", value, exc)
            return SweepResult(value=value, trajectory=None, error=str(exc))

    workers = int(os.environ.get(SWEEP_WORKERS_ENV, "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, values))
    return [one(value) for value in values]
