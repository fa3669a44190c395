"""Exception hierarchy shared by all goddard modules."""


class GoddardError(Exception):
    """Base class for every error raised by the package."""


class NonpositiveMass(GoddardError):
    pass


class ZeroVelocity(GoddardError):
    pass


class ZeroPv(GoddardError):
    pass


class DegenerateA(GoddardError):
    """Singular control cannot be extracted: psi_ddot does not depend on alpha."""


class StepSizeUnderflow(GoddardError):
    pass


class NonFiniteRhs(GoddardError):
    pass


class IntegrationFailed(GoddardError):
    pass


class StructureViolation(GoddardError):
    """The prescribed arc structure is inconsistent with the extremal."""


class DegenerateExtremal(StructureViolation):
    pass


class SingularJacobian(GoddardError):
    pass


class MaxIterationsExceeded(GoddardError):
    pass


class LineSearchFailed(GoddardError):
    pass


class SlabBoundary(GoddardError):
    pass


class NotTransverse(GoddardError):
    pass


class BudgetExhausted(GoddardError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class CycleDetected(GoddardError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class StartNotTransverse(GoddardError):
    pass


class InfeasibleStagnation(GoddardError):
    pass


class MaxIterations(GoddardError):
    pass


class GridMismatch(GoddardError):
    pass


class ConfigError(GoddardError):
    pass


class SchemaMismatch(GoddardError):
    pass
