"""Bilinear port-Hamiltonian converter models, energy maps, and equilibria.

The model class covers averaged DC-DC converter dynamics

    dx/dt = (J0 - R + sum_i u_i Ji) Q x + (G0 + sum_i u_i Gi) E

with state x made of inductor fluxes (Wb) and capacitor charges (C),
duty-ratio input u, stored energy H(x) = x^T Q x / 2, skew interconnection
matrices J, and positive-semidefinite dissipation R.  All matrices are
constant.  The buck-boost factory instantiates the two-state converter used
throughout the test scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotAssignableError, RankDeficientInputError

# Relative tolerance accepted on the equilibrium residual ||f* + g* u*||.
DEFAULT_ASSIGNABILITY_TOL = 1e-9

_STRUCT_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _check_square(name: str, a: np.ndarray, n: int) -> None:
    if a.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")


@dataclass(frozen=True)
class BilinearPHModel:
    """Constant-matrix bilinear model with energy H(x) = x^T Q x / 2.

    Invariants enforced at construction: Q symmetric positive definite,
    J0 and every Ji skew-symmetric, R symmetric positive semidefinite,
    all dimensions consistent and entries finite.  Instances are immutable
    and safe to share between concurrent runs.
    """

    Q: np.ndarray
    J0: np.ndarray
    Ji: tuple[np.ndarray, ...]
    R: np.ndarray
    G0: np.ndarray
    Gi: tuple[np.ndarray, ...]
    E: np.ndarray

    def __post_init__(self):
        Q = _frozen(self.Q)
        n = Q.shape[0]
        _check_square("Q", Q, n)
        scale = max(1.0, float(np.abs(Q).max()))
        if np.abs(Q - Q.T).max() > _STRUCT_TOL * scale:
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0.0:
            raise ValueError("Q must be positive definite")

        J0 = _frozen(self.J0)
        _check_square("J0", J0, n)
        if np.abs(J0 + J0.T).max() > _STRUCT_TOL * max(1.0, np.abs(J0).max()):
            raise ValueError("J0 must be skew-symmetric")

        Ji = tuple(_frozen(j) for j in self.Ji)
        for i, j in enumerate(Ji):
            _check_square(f"Ji[{i}]", j, n)
            if np.abs(j + j.T).max() > _STRUCT_TOL * max(1.0, np.abs(j).max()):
                raise ValueError(f"Ji[{i}] must be skew-symmetric")

        R = _frozen(self.R)
        _check_square("R", R, n)
        if np.abs(R - R.T).max() > _STRUCT_TOL * max(1.0, np.abs(R).max()):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() < -_STRUCT_TOL * max(1.0, np.abs(R).max()):
            raise ValueError("R must be positive semidefinite")

        G0 = _frozen(self.G0)
        _check_square("G0", G0, n)
        Gi = tuple(_frozen(g) for g in self.Gi)
        if len(Gi) != len(Ji):
            raise ValueError("Ji and Gi must have the same length")
        for i, g in enumerate(Gi):
            _check_square(f"Gi[{i}]", g, n)

        E = _frozen(self.E)
        if E.shape != (n,):
            raise ValueError(f"E must be a vector of length {n}, got {E.shape}")
        if not np.all(np.isfinite(E)):
            raise ValueError("E has non-finite entries")

        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "J0", J0)
        object.__setattr__(self, "Ji", Ji)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "G0", G0)
        object.__setattr__(self, "Gi", Gi)
        object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        """State dimension."""
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        """Input dimension (number of duty ratios)."""
        return len(self.Ji)


@dataclass(frozen=True)
class EquilibriumSpec:
    """Assignable operating point with its control, output map, and setpoint.

    C_mat is the constant output matrix (g*)^T Q; y_star = C_mat @ x_star.
    residual is the norm of the steady-state equation defect at (x*, u*).
    """

    x_star: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray
    C_mat: np.ndarray
    residual: float

    def __post_init__(self):
        object.__setattr__(self, "x_star", _frozen(self.x_star))
        object.__setattr__(self, "u_star", _frozen(self.u_star))
        object.__setattr__(self, "y_star", _frozen(self.y_star))
        object.__setattr__(self, "C_mat", _frozen(self.C_mat))


@dataclass(frozen=True)
class BuckBoostParams:
    """Buck-boost circuit parameters: source voltage, L, C, load resistance."""

    v_in: float
    inductance: float
    capacitance: float
    load_resistance: float

    def __post_init__(self):
        for name in ("v_in", "inductance", "capacitance", "load_resistance"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


def _check_state(model: BilinearPHModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state must have length {model.n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    return x


def eval_drift(model: BilinearPHModel, x: np.ndarray) -> np.ndarray:
    """Drift vector field f(x) = (J0 - R) Q x + G0 E."""
    x = _check_state(model, x)
    return (model.J0 - model.R) @ (model.Q @ x) + model.G0 @ model.E


def eval_input_matrix(model: BilinearPHModel, x: np.ndarray) -> np.ndarray:
    """Input matrix g(x) whose column i is Ji Q x + Gi E."""
    x = _check_state(model, x)
    qx = model.Q @ x
    cols = [model.Ji[i] @ qx + model.Gi[i] @ model.E for i in range(model.m)]
    return np.column_stack(cols)


def equilibrium_control(model: BilinearPHModel, x_star: np.ndarray) -> np.ndarray:
    """Least-squares steady input u* = -[(g*)^T g*]^{-1} (g*)^T f*.

    Raises RankDeficientInputError when g(x_star) loses column rank, in
    which case the normal matrix is singular and no unique u* exists.
    """
    g_star = eval_input_matrix(model, x_star)
    f_star = eval_drift(model, x_star)
    normal = g_star.T @ g_star
    # Rank check on the normal matrix; solve() would accept nearly singular input.
    eigs = np.linalg.eigvalsh(normal)
    if eigs.min() <= _STRUCT_TOL * max(1.0, eigs.max()):
        raise RankDeficientInputError(
            "input matrix at x_star is rank deficient; equilibrium control undefined"
        )
    return -np.linalg.solve(normal, g_star.T @ f_star)


def make_equilibrium(
    model: BilinearPHModel,
    x_star: np.ndarray,
    tol: float = DEFAULT_ASSIGNABILITY_TOL,
) -> EquilibriumSpec:
    """Validate assignability of x_star and bundle the operating point.

    The candidate passes when ||f* + g* u*|| <= tol * (1 + ||f*||) with u*
    the least-squares control; otherwise NotAssignableError carries the
    measured residual.
    """
    x_star = _check_state(model, x_star)
    f_star = eval_drift(model, x_star)
    g_star = eval_input_matrix(model, x_star)
    u_star = equilibrium_control(model, x_star)
    residual = float(np.linalg.norm(f_star + g_star @ u_star))
    threshold = tol * (1.0 + float(np.linalg.norm(f_star)))
    if residual > threshold:
        raise NotAssignableError(residual, threshold)
    c_mat = g_star.T @ model.Q
    return EquilibriumSpec(
        x_star=x_star,
        u_star=u_star,
        y_star=c_mat @ x_star,
        C_mat=c_mat,
        residual=residual,
    )


def buck_boost_model(params: BuckBoostParams) -> BilinearPHModel:
    """Two-state averaged buck-boost converter (flux, charge)."""
    j0 = np.array([[0.0, -1.0], [1.0, 0.0]])
    return BilinearPHModel(
        Q=np.diag([1.0 / params.inductance, 1.0 / params.capacitance]),
        J0=j0,
        Ji=(-j0,),
        R=np.diag([0.0, 1.0 / params.load_resistance]),
        G0=np.zeros((2, 2)),
        Gi=(np.diag([1.0, 0.0]),),
        E=np.array([params.v_in, 0.0]),
    )


def buck_boost_reference(
    params: BuckBoostParams, v_star: float, tol: float = 1e-12
) -> EquilibriumSpec:
    """Assignable buck-boost equilibrium for a desired capacitor voltage.

    The charge is x2* = C v* and the flux follows from the steady-state
    balance x1* = L x2* (x2* + v_in C) / (r C^2 v_in).  Only v_star >= 0
    is accepted (unidirectional power flow).
    """
    if not np.isfinite(v_star) or v_star < 0.0:
        raise ValueError(f"v_star must be nonnegative, got {v_star}")
    cap = params.capacitance
    x2 = cap * v_star
    x1 = (
        params.inductance
        * x2
        * (x2 + params.v_in * cap)
        / (params.load_resistance * cap**2 * params.v_in)
    )
    model = buck_boost_model(params)
    return make_equilibrium(model, np.array([x1, x2]), tol=tol)


def hamiltonian(model: BilinearPHModel, x: np.ndarray) -> float:
    """Stored energy H(x) = x^T Q x / 2."""
    x = _check_state(model, x)
    return 0.5 * float(x @ (model.Q @ x))


def shifted_storage(
    model: BilinearPHModel, x: np.ndarray, x_star: np.ndarray
) -> float:
    """Incremental energy H(x - x_star), zero exactly at the setpoint."""
    x = _check_state(model, x)
    x_star = _check_state(model, x_star)
    d = x - x_star
    return 0.5 * float(d @ (model.Q @ d))
