"""Exception hierarchy shared by all modules."""


class BmpError(Exception):
    """Base class for every error raised by this package."""


class IterationLimitError(BmpError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is kept on the exception so callers can
    decide whether it is good enough.
    """

    def __init__(self, message, eigenvalue, eigenvector, residual):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.eigenvector = eigenvector
        self.residual = residual


class SingularMatrixError(BmpError):
    pass


class DegenerateNeighborhoodError(BmpError):
    pass


class InvalidItemError(BmpError):
    pass


class AssignmentError(BmpError):
    pass


class TrainingDivergenceError(BmpError):
    pass


class UndefinedMetricError(BmpError):
    pass


class DataFormatError(BmpError):
    pass
