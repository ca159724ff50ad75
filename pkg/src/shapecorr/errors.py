"""Exception hierarchy.

Every error carries a ``kind`` string that the CLI reports in its error JSON,
and an ``exit_code``: 2 for bad input, 3 for numerical failure.
"""


class ShapeCorrError(Exception):
    exit_code = 2

    @property
    def kind(self) -> str:
        return type(self).__name__


class InputError(ShapeCorrError):
    exit_code = 2


class ParseError(InputError):
    pass


class NonTriangle(ParseError):
    pass


class DegenerateFace(InputError):
    pass


class InconsistentWinding(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class ManifestError(InputError):
    pass


class NumericalError(ShapeCorrError):
    exit_code = 3


class NumericalDegeneracy(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    def __init__(self, message: str, achieved: int = 0):
        super().__init__(message)
        self.achieved = achieved


class InsufficientBasis(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class SingularProjection(NumericalError):
    pass
