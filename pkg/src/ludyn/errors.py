"""Exception types shared across the package."""


class LudynError(Exception):
    pass


class ParseError(LudynError):
    def __init__(self, line, column, reason):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


class TopologyError(LudynError):
    pass


class DimensionMismatch(LudynError, ValueError):
    pass


class MissingId(LudynError, KeyError):
    pass


class DuplicateId(LudynError, ValueError):
    pass


class SingularJointInertia(LudynError):
    pass


class StructurallySingular(LudynError):
    """No perfect matching exists between rows and columns of a pattern."""

    def __init__(self, message, rows=(), cols=()):
        self.rows = tuple(rows)
        self.cols = tuple(cols)
        super().__init__(message)


class NumericallySingularPivot(LudynError):
    def __init__(self, step, row, col, value):
        self.step, self.row, self.col, self.value = step, row, col, value
        super().__init__(f"pivot {step} at ({row}, {col}) is numerically zero ({value:g})")


class IllPosedProblem(LudynError):
    def __init__(self, wellposedness):
        self.wellposedness = wellposedness
        super().__init__(f"problem is not well-posed: {wellposedness.verdict}")
