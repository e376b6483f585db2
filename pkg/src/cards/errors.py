"""Exception hierarchy shared by all modules."""


class CardsError(Exception):
    """Base class for every error raised by the package."""


class ZeroColumnError(CardsError, ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column + 1} has (numerically) zero norm")


class PartitionError(CardsError, ValueError):
    pass


class OverlapError(PartitionError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"index {index + 1} appears in more than one group")


class MissingIndexError(PartitionError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"index {index + 1} is not covered by the partition")


class EmptyGroupError(PartitionError):
    def __init__(self, group):
        self.group = group
        super().__init__(f"group {group + 1} is empty")


class InvalidSpecError(CardsError, ValueError):
    pass


class LambdaZeroError(CardsError, ValueError):
    pass


class SingularGramError(CardsError, ValueError):
    pass


class SingularGroupedGramError(SingularGramError):
    pass


class NoConvergenceError(CardsError, RuntimeError):
    def __init__(self, iterations, what="solver"):
        self.iterations = iterations
        super().__init__(f"{what} did not converge within {iterations} iterations")


class AllZeroError(CardsError, ValueError):
    pass


class NotApplicableError(CardsError, ValueError):
    pass


class InconsistentOrderError(CardsError, ValueError):
    pass


class MismatchedUniverseError(CardsError, ValueError):
    pass


class DfTooLargeError(CardsError, ValueError):
    pass


class DataError(CardsError, ValueError):
    """Problems with user supplied data files."""


class ParseError(DataError):
    def __init__(self, line, col, msg="malformed row"):
        self.line, self.col = line, col
        super().__init__(f"line {line}, column {col}: {msg}")


class NonNumericError(DataError):
    def __init__(self, cell, line, col):
        self.cell, self.line, self.col = cell, line, col
        super().__init__(f"non-numeric cell {cell!r} at line {line}, column {col}")


class MissingResponseError(DataError):
    pass
