"""Exception hierarchy.

Every error carries enough context to be reported by the command line tool;
the exit code is taken from the class attribute ``exit_code``.
"""


class JMGTError(Exception):
    exit_code = 1


class DomainError(JMGTError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class ValidationError(DomainError):
    """A configuration entry is malformed; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class UnsupportedConfigurationError(DomainError):
    pass


class NumericalError(JMGTError, ArithmeticError):
    exit_code = 3


class EigenSolverError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(NumericalError):
    """The leading coefficient ``1 - 2 kappa sigma u`` dropped below the margin."""

    def __init__(self, time, node, value):
        super().__init__(
            f"non-degeneracy violated at t={time:.6g}, node {node}: "
            f"1 - 2*kappa*sigma*u = {value:.6g}"
        )
        self.time = time
        self.node = node
        self.value = value


class InstabilityError(NumericalError):
    def __init__(self, time, dt):
        super().__init__(
            f"non-finite state at t={time:.6g}; reduce the time step (dt={dt:.3g})"
        )
        self.time = time
        self.dt = dt


class NotSwitchedOffError(NumericalError):
    """|z|^2 never settled below the lower cutoff threshold."""


class DoublePoleError(NumericalError):
    """Critically damped mode (4 c^2 lambda == b^2): the resolvent has a double pole."""


class EstimationError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class InjectivityError(NumericalError):
    """Eigenfunctions of one or more eigenvalues lose linear independence under observation."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


class ReconstructionDomainError(NumericalError):
    pass


class OutsideLocalBallError(NumericalError):
    """Frozen Newton residual grew over consecutive iterations."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class VerificationFailure(JMGTError):
    exit_code = 4
