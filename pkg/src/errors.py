"""
Exception hierarchy for the sensitivity pipeline.

ValidationError subclasses map to CLI exit code 2, NumericalError subclasses
to exit code 3.
"""


class SensitivityError(Exception):
    """Base class for every error raised by the pipeline."""


class ValidationError(SensitivityError):
    pass


class NumericalError(SensitivityError):
    pass


class InvalidDimensionsError(ValidationError):
    pass


class LengthMismatchError(ValidationError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"parameter vector has length {got}, expected {expected}")
        self.expected = expected
        self.got = got


class InvalidStepError(ValidationError):
    pass


class InvalidSingularValuesError(ValidationError):
    pass


class ActiveSetFlipError(ValidationError):
    def __init__(self, parameter: int, step: float):
        super().__init__(f"active set changes when perturbing parameter {parameter} by ±{step:g}")
        self.parameter = parameter
        self.step = step


class AssumptionViolationError(ValidationError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class DegenerateProblemError(ValidationError):
    pass


class NumericalFailureError(NumericalError):
    pass


class SingularLocalJacobianError(NumericalError):
    def __init__(self, subproblem: int):
        super().__init__(
            f"local KKT Jacobian of subproblem {subproblem} is singular "
            "(local second-order, LICQ or strict complementarity fails)"
        )
        self.subproblem = subproblem


class SingularCouplingError(NumericalError):
    pass


class SingularGlobalJacobianError(NumericalError):
    pass


class SingularLocalProjectionError(NumericalError):
    def __init__(self, node: int, report: dict = None):
        super().__init__(f"local projection of node {node} is singular: {report or {}}")
        self.node = node
        self.report = report or {}


def exit_code(exc: BaseException) -> int:
    """CLI exit code for an exception (0 only when exc is None)."""
    if exc is None:
        return 0
    if isinstance(exc, ValidationError):
        return 2
    if isinstance(exc, NumericalError):
        return 3
    return 1
