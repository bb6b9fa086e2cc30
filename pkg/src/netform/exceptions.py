"""Exception types raised across the package."""


class NetformError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NetformError, ValueError):
    pass


class MeshFormatError(NetformError, ValueError):
    """Raised when a mesh file cannot be parsed.

    The offending (1-based) line number is kept in ``lineno``.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class GeometryError(NetformError, ValueError):
    """Inverted or degenerate cells."""


class EllipticityError(NetformError):
    """Some cell has lambda_min(C) + r <= 0, so the Poisson problem is not elliptic.

    Recoverable: the time loop turns it into a step rejection.
    """

    def __init__(self, cells, min_value):
        self.cells = cells
        self.min_value = float(min_value)
        super().__init__(
            f"ellipticity violated in {len(cells)} cell(s); "
            f"min lambda_min(C)+r = {self.min_value:.3e}"
        )


class NotSPDError(NetformError, ArithmeticError):
    """A conductivity block of the Jacobian is not symmetric positive definite."""

    def __init__(self, cell):
        self.cell = int(cell)
        super().__init__(f"J00 block of cell {self.cell} is not SPD")


class KrylovConvergenceError(NetformError):
    """Krylov solver hit its iteration limit or broke down.

    Carries the best iterate found so far so callers may still use it.
    """

    def __init__(self, message, x, residual_norm, iterations):
        super().__init__(message)
        self.x = x
        self.residual_norm = float(residual_norm)
        self.iterations = int(iterations)


class IndefiniteError(NetformError, ArithmeticError):
    """Negative curvature met inside conjugate gradients."""


class StepSizeCollapseError(NetformError):
    pass


class ConfigError(NetformError, ValueError):
    """Invalid configuration; ``key`` and ``lineno`` locate the problem when known."""

    def __init__(self, message, key=None, lineno=None):
        self.detail = message
        prefix = []
        if lineno is not None:
            prefix.append(f"line {lineno}")
        if key is not None:
            prefix.append(f"key '{key}'")
        if prefix:
            message = ", ".join(prefix) + ": " + message
        super().__init__(message)
        self.key = key
        self.lineno = lineno
