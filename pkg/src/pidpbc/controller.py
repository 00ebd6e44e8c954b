"""Discrete-time PID around the shifted-passive output, plus its CT variant.

The DT law keeps the integrator passivity of the continuous design: the
integral channel is advanced trapezoidally through the midpoint output,

    xi_{k+1} = xi_k + delta * y_err_k
    u_k      = -K_P y_err_k - (1/2) K_I (xi_{k+1} + xi_k)
               - (1/delta) K_D C_mat dx_k,

which makes the per-step storage balance of controller_storage exact.  The
CT variant is used by the sampled-data emulation baseline where the
forward state sample is unavailable and the output derivative is formed by
a backward difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EquilibriumSpec

_SPD_TOL = 1e-12


def _as_gain(value, m: int, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1) * np.eye(m)
    if a.shape != (m, m):
        raise ValueError(f"{name} must be {m}x{m}, got {a.shape}")
    if np.abs(a - a.T).max() > _SPD_TOL * max(1.0, np.abs(a).max()):
        raise ValueError(f"{name} must be symmetric")
    return a


@dataclass(frozen=True)
class PIDGains:
    """Tuning gains: K_P and K_I symmetric positive definite, K_D PSD."""

    k_p: np.ndarray
    k_i: np.ndarray
    k_d: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.k_p, dtype=float)).shape[0]
        k_p = _as_gain(self.k_p, m, "k_p")
        k_i = _as_gain(self.k_i, m, "k_i")
        k_d = _as_gain(self.k_d, m, "k_d")
        if np.linalg.eigvalsh(k_p).min() <= 0.0:
            raise ValueError("k_p must be positive definite")
        if np.linalg.eigvalsh(k_i).min() <= 0.0:
            raise ValueError("k_i must be positive definite")
        if np.linalg.eigvalsh(k_d).min() < -_SPD_TOL * max(1.0, np.abs(k_d).max()):
            raise ValueError("k_d must be positive semidefinite")
        for name, a in (("k_p", k_p), ("k_i", k_i), ("k_d", k_d)):
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_scalars(cls, k_p: float, k_i: float, k_d: float, m: int = 1) -> "PIDGains":
        """Scalar gains lifted to m x m diagonal matrices."""
        eye = np.eye(m)
        return cls(k_p=k_p * eye, k_i=k_i * eye, k_d=k_d * eye)

    @property
    def m(self) -> int:
        return self.k_p.shape[0]


@dataclass
class ControllerState:
    """Integrator value and the previous plant sample (for backward
    differences in the sampled-data modes)."""

    xi: np.ndarray
    x_prev: np.ndarray | None = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("xi has non-finite entries")
        if self.x_prev is not None:
            self.x_prev = np.asarray(self.x_prev, dtype=float)


def xi_star(gains: PIDGains, eq: EquilibriumSpec) -> np.ndarray:
    """Stationary integrator value -K_I^{-1} u_star."""
    return -np.linalg.solve(gains.k_i, eq.u_star)


def dt_pid_output(
    gains: PIDGains,
    eq: EquilibriumSpec,
    xi_k: np.ndarray,
    y_tilde_k: np.ndarray,
    dx_k: np.ndarray,
    delta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One DT PID evaluation; returns (u_k, xi_next).

    dx_k is the state increment the caller deems consistent with y_tilde_k:
    the coupled closed-loop solve feeds x_{k+1} - x_k, the sampled-data
    modes feed the backward difference x_k - x_{k-1}.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    xi_k = np.asarray(xi_k, dtype=float)
    y_tilde_k = np.atleast_1d(np.asarray(y_tilde_k, dtype=float))
    dx_k = np.asarray(dx_k, dtype=float)
    xi_next = xi_k + delta * y_tilde_k
    u_k = (
        -gains.k_p @ y_tilde_k
        - 0.5 * (gains.k_i @ (xi_next + xi_k))
        - (1.0 / delta) * (gains.k_d @ (eq.C_mat @ dx_k))
    )
    return u_k, xi_next


def controller_storage(
    gains: PIDGains,
    eq: EquilibriumSpec,
    xi: np.ndarray,
    x: np.ndarray,
    xi_ref: np.ndarray | None = None,
) -> float:
    """Controller storage (1/2) xi_err^T K_I xi_err + (1/2) (C x_err)^T K_D (C x_err).

    xi_ref defaults to the stationary integrator value for eq.
    """
    if xi_ref is None:
        xi_ref = xi_star(gains, eq)
    xi_err = np.asarray(xi, dtype=float) - xi_ref
    cx_err = eq.C_mat @ (np.asarray(x, dtype=float) - eq.x_star)
    return 0.5 * float(xi_err @ (gains.k_i @ xi_err)) + 0.5 * float(
        cx_err @ (gains.k_d @ cx_err)
    )


def ct_pid_derivative(
    gains: PIDGains,
    eq: EquilibriumSpec,
    xi: np.ndarray,
    y_tilde: np.ndarray,
    y_tilde_dot: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time PID law; returns (u, xi_dot = y_tilde)."""
    xi = np.asarray(xi, dtype=float)
    y_tilde = np.atleast_1d(np.asarray(y_tilde, dtype=float))
    y_tilde_dot = np.atleast_1d(np.asarray(y_tilde_dot, dtype=float))
    u = -gains.k_p @ y_tilde - gains.k_i @ xi - gains.k_d @ y_tilde_dot
    return u, y_tilde
