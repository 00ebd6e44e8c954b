"""Exception types shared across the package."""


class PidPbcError(Exception):
    """Base class for all library errors."""


class NotAssignableError(PidPbcError):
    """Requested equilibrium state admits no constant input."""

    def __init__(self, residual: float, threshold: float):
        self.residual = residual
        self.threshold = threshold
        super().__init__(
            f"equilibrium residual {residual:.3e} exceeds threshold {threshold:.3e}"
        )


class RankDeficientInputError(PidPbcError):
    """Input matrix at the candidate equilibrium has deficient column rank."""


class SingularStepMatrixError(PidPbcError):
    """Implicit-midpoint step matrix I - (delta/2) N(u) Q is singular."""

    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"step matrix numerically singular (rcond={condition:.3e})")


class NoConvergenceError(PidPbcError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Newton did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class SingularJacobianError(PidPbcError):
    """Newton Jacobian is singular at the current iterate."""


class WrongModeError(PidPbcError):
    """Trajectory was produced in a mode the requested check does not cover."""


class ConfigError(PidPbcError):
    """Scenario configuration file is malformed or inconsistent."""
