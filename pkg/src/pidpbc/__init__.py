"""Discrete-time PID passivity-based control of bilinear power-converter
models, with structure-preserving closed-loop simulation and executable
certificate checks."""

from .controller import ControllerState, PIDGains, ct_pid_derivative, dt_pid_output, controller_storage, xi_star
from .discretize import (
    StepperSettings,
    build_NM,
    damped_newton,
    euler_step,
    midpoint_step_explicit,
    midpoint_step_newton,
    reference_trajectory,
)
from .engine import (
    LoopState,
    RunSummary,
    Scenario,
    Segment,
    SolverAbort,
    StepRecord,
    SweepResult,
    Trajectory,
    closed_loop_step_dt,
    closed_loop_step_emulation,
    closed_loop_step_euler,
    run_scenario,
    scenario_hash,
    step_residuals,
    sweep,
)
from .errors import (
    ConfigError,
    NoConvergenceError,
    NotAssignableError,
    PidPbcError,
    RankDeficientInputError,
    SingularJacobianError,
    SingularStepMatrixError,
    WrongModeError,
)
from .model import (
    BilinearPHModel,
    BuckBoostParams,
    EquilibriumSpec,
    buck_boost_model,
    buck_boost_reference,
    equilibrium_control,
    eval_drift,
    eval_input_matrix,
    hamiltonian,
    make_equilibrium,
    shifted_storage,
)
from .verify import (
    CheckReport,
    DampingReport,
    OrderCheckResult,
    check_controller_passivity,
    check_lyapunov,
    check_plant_passivity,
    damping_injection,
    order_check,
    run_all_checks,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
