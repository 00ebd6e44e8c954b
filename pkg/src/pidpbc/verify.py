"""Executable checks for the passivity and Lyapunov certificates.

Every check evaluates a per-step identity that holds exactly in real
arithmetic for trajectories produced by the coupled DT loop; the
tolerances exist solely to absorb floating point.  Violations therefore
indicate an implementation fault (or a trajectory produced by a scheme the
certificate does not cover, such as the Euler baseline).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import PIDGains, xi_star
from .discretize import StepperSettings, midpoint_step_explicit, euler_step, reference_trajectory
from .engine import Segment, Trajectory
from .errors import WrongModeError
from .model import (
    BilinearPHModel,
    EquilibriumSpec,
    eval_input_matrix,
    shifted_storage,
)
from .controller import controller_storage

DEFAULT_CHECK_TOL = 1e-8


@dataclass(frozen=True)
class DampingReport:
    """Spectral check of the damping matrix R + g* K_P (g*)^T."""

    matrix: np.ndarray
    alpha: float
    satisfied: bool


@dataclass(frozen=True)
class CheckReport:
    name: str
    max_violation: float
    worst_step: int
    passed: bool
    tolerance: float
    skipped: bool = False
    note: str = ""

    def __str__(self) -> str:
        if self.skipped:
            return f"{self.name}: SKIPPED ({self.note})"
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name}: {status} max_violation={self.max_violation:.3e} "
            f"at step {self.worst_step} (tol={self.tolerance:.1e})"
        )


def _require_dense(traj: Trajectory) -> None:
    if traj.record_every != 1:
        raise ValueError("per-step checks require record_every=1 trajectories")


def _segment_slices(traj: Trajectory) -> list[tuple[Segment, int, int]]:
    """(segment, first record index, one past last) for each segment."""
    bounds = [seg.start_step for seg in traj.segments] + [len(traj.records)]
    return [
        (seg, bounds[i], bounds[i + 1])
        for i, seg in enumerate(traj.segments)
        if bounds[i] < bounds[i + 1]
    ]


def _rel_scale(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))


def _report(name: str, viol: np.ndarray, steps: np.ndarray, tol: float) -> CheckReport:
    if viol.size == 0:
        return CheckReport(name, 0.0, 0, True, tol, note="no steps checked")
    worst = int(np.argmax(viol))
    max_v = float(viol[worst])
    return CheckReport(name, max_v, int(steps[worst]), max_v <= tol, tol)


def check_plant_passivity(
    traj: Trajectory,
    model: BilinearPHModel,
    eq: EquilibriumSpec | None = None,
    delta: float | None = None,
    tol: float = DEFAULT_CHECK_TOL,
) -> CheckReport:
    """Per-step balance (1/d) dH = -z_err^T Q R Q z_err + y_err^T u_err,
    plus the passivity inequality (1/d) dH <= y_err^T u_err + tol.

    Requires a dt-midpoint trajectory (the identity is evaluated at the
    logged midpoint states).  Pass eq to override the per-segment setpoints.
    """
    if traj.mode != "dt-midpoint":
        raise WrongModeError(
            f"plant passivity check needs dt-midpoint data, got {traj.mode!r}"
        )
    _require_dense(traj)
    delta = traj.delta if delta is None else delta
    viols, steps = [], []
    for seg, lo, hi in _segment_slices(traj):
        seg_eq = eq if eq is not None else seg.eq
        for rec in traj.records[lo:hi]:
            x_next = 2.0 * rec.z - rec.x
            dh = (
                shifted_storage(model, x_next, seg_eq.x_star)
                - shifted_storage(model, rec.x, seg_eq.x_star)
            ) / delta
            z_err = rec.z - seg_eq.x_star
            qz = model.Q @ z_err
            dissipated = float(qz @ (model.R @ qz))
            supplied = float(
                (seg_eq.C_mat @ rec.z - seg_eq.y_star) @ (rec.u - seg_eq.u_star)
            )
            rhs = -dissipated + supplied
            scale = max(1.0, abs(dh), abs(rhs))
            identity = abs(dh - rhs) / scale
            inequality = max(0.0, dh - supplied) / scale
            viols.append(max(identity, inequality))
            steps.append(rec.k)
    return _report("plant-shifted-passivity", np.array(viols), np.array(steps), tol)


def check_controller_passivity(
    traj: Trajectory,
    gains: PIDGains,
    eq: EquilibriumSpec | None = None,
    delta: float | None = None,
    tol: float = DEFAULT_CHECK_TOL,
) -> CheckReport:
    """Per-step balance (1/d) dH_c = -y_err^T K_P y_err - y_err^T u_err."""
    if traj.mode != "dt-midpoint":
        raise WrongModeError(
            f"controller passivity check needs dt-midpoint data, got {traj.mode!r}"
        )
    _require_dense(traj)
    delta = traj.delta if delta is None else delta
    viols, steps = [], []
    for seg, lo, hi in _segment_slices(traj):
        seg_eq = eq if eq is not None else seg.eq
        ref = xi_star(gains, seg_eq)
        for rec in traj.records[lo:hi]:
            y_tilde = seg_eq.C_mat @ rec.z - seg_eq.y_star
            u_tilde = rec.u - seg_eq.u_star
            x_next = 2.0 * rec.z - rec.x
            xi_next = rec.xi + delta * (seg_eq.C_mat @ rec.z - seg_eq.y_star)
            dhc = (
                controller_storage(gains, seg_eq, xi_next, x_next, xi_ref=ref)
                - controller_storage(gains, seg_eq, rec.xi, rec.x, xi_ref=ref)
            ) / delta
            rhs = -float(y_tilde @ (gains.k_p @ y_tilde)) - float(y_tilde @ u_tilde)
            scale = max(1.0, abs(dhc), abs(rhs))
            viols.append(abs(dhc - rhs) / scale)
            steps.append(rec.k)
    return _report(
        "controller-shifted-passivity", np.array(viols), np.array(steps), tol
    )


def check_lyapunov(
    traj: Trajectory,
    model: BilinearPHModel,
    gains: PIDGains,
    eq: EquilibriumSpec | None = None,
    delta: float | None = None,
    tol: float = DEFAULT_CHECK_TOL,
    allow_mode_mismatch: bool = False,
) -> CheckReport:
    """Per-step decrease dV = -z_err^T Q [R + g* K_P (g*)^T] Q z_err <= 0.

    With allow_mode_mismatch the midpoint state is reconstructed as
    (x_k + x_{k+1})/2 on non-midpoint trajectories; the certificate is then
    expected to fail, which is the point of the negative control.
    """
    if traj.mode != "dt-midpoint" and not allow_mode_mismatch:
        raise WrongModeError(
            f"Lyapunov check needs dt-midpoint data, got {traj.mode!r}"
        )
    _require_dense(traj)
    delta = traj.delta if delta is None else delta
    viols, steps = [], []
    records = traj.records
    for seg, lo, hi in _segment_slices(traj):
        seg_eq = eq if eq is not None else seg.eq
        ref = xi_star(gains, seg_eq)
        g_star = eval_input_matrix(model, seg_eq.x_star)
        damp = model.R + g_star @ (gains.k_p @ g_star.T)
        for idx in range(lo, hi):
            rec = records[idx]
            if rec.z is not None:
                z = rec.z
                x_next = 2.0 * z - rec.x
            else:
                if idx + 1 < len(records):
                    x_next = records[idx + 1].x
                else:
                    x_next = traj.final_x
                z = 0.5 * (rec.x + x_next)
            xi_next = rec.xi + delta * (seg_eq.C_mat @ z - seg_eq.y_star)
            v0 = (
                shifted_storage(model, rec.x, seg_eq.x_star)
                + controller_storage(gains, seg_eq, rec.xi, rec.x, xi_ref=ref)
            ) / delta
            v1 = (
                shifted_storage(model, x_next, seg_eq.x_star)
                + controller_storage(gains, seg_eq, xi_next, x_next, xi_ref=ref)
            ) / delta
            dv = v1 - v0
            z_err = z - seg_eq.x_star
            qz = model.Q @ z_err
            rhs = -float(qz @ (damp @ qz))
            scale = max(1.0, abs(dv), abs(rhs))
            identity = abs(dv - rhs) / scale
            decrease = max(0.0, dv) / scale
            viols.append(max(identity, decrease))
            steps.append(rec.k)
    return _report("lyapunov-decrease", np.array(viols), np.array(steps), tol)


def damping_injection(
    model: BilinearPHModel, eq: EquilibriumSpec, gains: PIDGains | np.ndarray
) -> DampingReport:
    """Smallest eigenvalue of R + g* K_P (g*)^T and whether it is positive.

    Accepts either full PID gains or a bare proportional-gain matrix (so
    the K_P -> 0 boundary can be inspected even though PIDGains rejects it).
    """
    k_p = gains.k_p if isinstance(gains, PIDGains) else np.atleast_2d(
        np.asarray(gains, dtype=float)
    )
    g_star = eval_input_matrix(model, eq.x_star)
    matrix = model.R + g_star @ (k_p @ g_star.T)
    matrix = 0.5 * (matrix + matrix.T)
    alpha = float(np.linalg.eigvalsh(matrix).min())
    return DampingReport(matrix=matrix, alpha=alpha, satisfied=alpha > 0.0)


@dataclass(frozen=True)
class OrderCheckResult:
    exponent: float
    deltas: tuple[float, ...]
    errors: tuple[float, ...]
    degenerate: bool


def order_check(
    model: BilinearPHModel,
    u_schedule,
    deltas,
    t_final: float,
    method: str = "midpoint",
    x0: np.ndarray | None = None,
    substeps: int = 100,
) -> OrderCheckResult:
    """Fit the global convergence order of a stepper against the fine
    RK4 reference under the same zero-order-hold input.

    u_schedule maps a sample time to the held input (callable) or is a
    constant vector.  Needs at least three deltas; returns the fitted
    log-log slope, or a degenerate flag when the errors vanish.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3:
        raise ValueError("order check needs at least three deltas")
    if method not in ("midpoint", "euler"):
        raise ValueError(f"method must be 'midpoint' or 'euler', got {method!r}")
    x0 = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    errors = []
    for delta in deltas:
        steps = int(round(t_final / delta))
        if callable(u_schedule):
            us = np.array([np.atleast_1d(u_schedule(k * delta)) for k in range(steps)])
        else:
            us = np.tile(np.atleast_1d(np.asarray(u_schedule, float)), (steps, 1))
        x = x0.copy()
        for k in range(steps):
            if method == "midpoint":
                x = midpoint_step_explicit(model, x, us[k], delta)
            else:
                x = euler_step(model, x, us[k], delta)
        ref = reference_trajectory(model, x0, us, delta, substeps=substeps)[-1]
        errors.append(float(np.linalg.norm(x - ref)))
    errors_arr = np.array(errors)
    scale = float(np.linalg.norm(x0)) + 1.0
    if np.any(errors_arr <= 1e-14 * scale):
        return OrderCheckResult(
            exponent=float("nan"),
            deltas=tuple(deltas),
            errors=tuple(errors),
            degenerate=True,
        )
    slope = np.polyfit(np.log(deltas), np.log(errors_arr), 1)[0]
    return OrderCheckResult(
        exponent=float(slope),
        deltas=tuple(deltas),
        errors=tuple(errors),
        degenerate=False,
    )


def run_all_checks(
    traj: Trajectory,
    model: BilinearPHModel,
    gains: PIDGains,
    tol: float = DEFAULT_CHECK_TOL,
) -> list[CheckReport]:
    """All applicable certificate checks; midpoint-only checks are reported
    as skipped on other modes."""
    reports: list[CheckReport] = []
    skip_note = f"not applicable to mode {traj.mode!r}"
    if traj.mode == "dt-midpoint":
        reports.append(check_plant_passivity(traj, model, tol=tol))
        reports.append(check_controller_passivity(traj, gains, tol=tol))
        reports.append(check_lyapunov(traj, model, gains, tol=tol))
    else:
        for name in (
            "plant-shifted-passivity",
            "controller-shifted-passivity",
            "lyapunov-decrease",
        ):
            reports.append(
                CheckReport(name, 0.0, 0, True, tol, skipped=True, note=skip_note)
            )
    return reports
