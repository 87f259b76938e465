"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GridVocError(Exception):
    exit_code = 3


class ValidationError(GridVocError):
    exit_code = 2


class ParseError(ValidationError):
    pass


class DisconnectedGraph(ValidationError):
    pass


class SingularImpedance(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class AssumptionViolated(ValidationError):
    pass


class InconsistentProfile(ValidationError):
    pass


class NoConvergence(GridVocError):
    pass


class DegenerateVoltage(GridVocError):
    pass


class DegenerateNetwork(GridVocError):
    pass


class EigensolveFailure(GridVocError):
    pass


class Diverged(GridVocError):
    exit_code = 4


class StepSizeUnderflow(Diverged):
    pass


class NonFiniteState(Diverged):
    pass
