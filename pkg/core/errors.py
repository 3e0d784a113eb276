"""
Exception types shared by the solver, the simulator and the CLI.

Each class maps onto one of the CLI exit codes so that callers can tell an
input mistake from a model that breaks the spectral assumptions.
"""

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_INPUT = 2
EXIT_ASSUMPTION = 3


class ModelError(ValueError):
    """Invalid queue model or phase-type input.

    Attributes:
        field: Name of the offending input field (e.g. "gamma", "T", "tau")
        line: Line number for JSON syntax errors, else None
        column: Column number for JSON syntax errors, else None
    """

    def __init__(self, message: str, field: str = None,
                 line: int = None, column: int = None):
        self.field = field
        self.line = line
        self.column = column
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}, column {column}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class AssumptionViolation(RuntimeError):
    """The model violates one or more clauses of the spectral assumptions.

    Attributes:
        clauses: Names of the failed clauses, e.g. ["Assumption 1 ii (irreducible)"]
        report: The full diagnostic dict from check_assumptions
    """

    def __init__(self, clauses: list[str], report: dict = None):
        self.clauses = list(clauses)
        self.report = report or {}
        super().__init__("Assumption violated: " + "; ".join(self.clauses))


class NumericalError(RuntimeError):
    """A rank, residual, realness or convergence check failed in the kernel."""


class NormalizationError(NumericalError):
    """A nullvector cannot be scaled to first component 1 (that component vanishes)."""
