class BdieError(Exception):
    """Base class for all errors raised by the solver"""


class ConfigurationError(BdieError, ValueError):
    """Invalid run configuration"""


class GeometryError(BdieError, ValueError):
    """Invalid mesh parameters or a point where the geometry forbids it"""


class CoefficientError(BdieError, ValueError):
    """Unknown or non-positive coefficient field"""


class CoincidentPointsError(BdieError, ValueError):
    """Kernel evaluated with x == y"""


class SolverError(BdieError, RuntimeError):
    """Singular, ill-conditioned or non-convergent linear solve"""
