"""Exception hierarchy shared by all blockcfd modules."""


class BlockCfdError(Exception):
    """Base class for every error raised by the package."""


class MeshParseError(BlockCfdError, ValueError):
    """Malformed mesh file. Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(BlockCfdError, ValueError):
    """A mesh violates one of its geometric or topological invariants."""


class StructureMismatchError(BlockCfdError):
    """Matrix topology differs from the one the engine structure was built for."""


class SingularBlockError(BlockCfdError, ArithmeticError):
    """A diagonal block could not be inverted during preconditioner setup."""

    def __init__(self, message, cell=None):
        self.cell = cell
        super().__init__(message)


class BreakdownError(BlockCfdError, ArithmeticError):
    """Krylov breakdown before the residual target was met."""


class CoarseSolveError(BlockCfdError, ArithmeticError):
    """The coarsest AMG level is singular."""


class DistributedError(BlockCfdError):
    """A simulated rank did not receive an expected message."""

    def __init__(self, message, waiting=None, peers=None):
        self.waiting = waiting
        self.peers = peers
        super().__init__(message)


class NonPhysicalStateError(BlockCfdError, ArithmeticError):
    """Negative density or pressure that could not be recovered."""


class SolverDivergedError(BlockCfdError, ArithmeticError):
    """Nonlinear iteration diverged."""

    def __init__(self, message, iteration=None, diagnostics=None):
        self.iteration = iteration
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ConfigError(BlockCfdError, ValueError):
    """Invalid case configuration."""
