"""
Exception hierarchy for the toolkit
"""


class CoagFragError(Exception):
    """Base class for all toolkit errors"""


class PartitionError(CoagFragError, ValueError):
    """Invalid partition or invalid merge/split request"""


class PartitionUnderflowError(PartitionError):
    """A split would create a part below the underflow floor"""


class SigmaSpecError(CoagFragError, ValueError):
    """Invalid splitting-measure description"""


class QuadratureError(CoagFragError, ArithmeticError):
    """Quadrature could not reach the requested accuracy"""


class ConfigError(CoagFragError, ValueError):
    """Invalid run configuration"""


class OffSimplexWarning(RuntimeWarning):
    """A kernel step was taken from a state of total mass below 1"""
