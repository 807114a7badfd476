"""
Exception hierarchy for Hambit

Every error carries the process exit code the CLI reports for it.
"""


class HambitError(Exception):
    """Base class for all Hambit failures"""

    exit_code = 3


class ConfigError(HambitError, ValueError):
    """Run configuration failed validation; message starts with the field path"""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ComputationError(HambitError):
    """A numerical routine could not produce a result"""

    exit_code = 3


class DimensionError(ComputationError, ValueError):
    """Operands live in spaces of different dimension"""


class CFLViolation(ComputationError, ValueError):
    """Time step exceeds the spatial step (dt > dx)"""

    def __init__(self, dt: float, dx: float):
        self.dt = dt
        self.dx = dx
        super().__init__(f"CFL condition violated: dt={dt!r} > dx={dx!r}")


class GridExhausted(ComputationError):
    """The internal grid has no node left beyond the active range"""


class SingularGramError(ComputationError, ValueError):
    """Projection directions are (numerically) linearly dependent"""

    def __init__(self, condition_number: float, limit: float):
        self.condition_number = condition_number
        super().__init__(
            f"Gram matrix is singular: condition number {condition_number:.6g} exceeds {limit:.0e}"
        )


class CouplingError(ComputationError, ValueError):
    """Volatility shares its random stream with the driving noise"""


class UnsupportedKernelError(ComputationError, TypeError):
    """Kernel variant does not provide the requested constant"""


class InsufficientLevelsError(ComputationError, ValueError):
    """Too few usable refinement levels to fit a rate"""


class OutputError(HambitError):
    """Writing or reading a report file failed"""

    exit_code = 4

    def __init__(self, path, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")
