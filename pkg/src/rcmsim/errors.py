"""Exception types raised across the package."""


class RcmSimError(Exception):
    """Base class for all package-specific errors."""


class InvalidMatrix(RcmSimError):
    """Matrix input contains non-finite entries or has unusable shape."""


class RankDeficientConstraint(RcmSimError):
    """Constraint Jacobian lost row rank; the constraint set is ill-posed."""


class NotPositiveDefinite(RcmSimError):
    """Symmetric positive-definite input expected."""


class SingularTaskInertia(RcmSimError):
    """Task-space inertia is singular at this configuration."""


class SingularExtendedJacobian(RcmSimError):
    """Stacked constraint/null-space Jacobian is not invertible."""


class InvalidAlpha(RcmSimError):
    """Trocar scaling factor outside (0, 1]."""


class InconsistentTool(RcmSimError):
    """Reference and tip positions do not agree with the tool length."""


class ModelError(RcmSimError):
    """Robot model file is missing or malformed; message names the field path."""


class ConfigError(RcmSimError):
    """Run configuration is missing or malformed; message names the field path."""


class SimulationDiverged(RcmSimError):
    """Simulation state became non-finite.

    Attributes:
        tick: index of the first bad tick.
        time: simulation time of that tick in seconds.
        trace: partial trace recorded up to (not including) the bad tick,
            when available.
    """

    def __init__(self, tick: int, time: float, detail: str = "", trace=None):
        self.tick = tick
        self.time = time
        self.trace = trace
        msg = f"simulation diverged at tick {tick} (t={time:.6f} s)"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
