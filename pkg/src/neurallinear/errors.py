"""Exception hierarchy shared across the package."""


class NeuralLinearError(Exception):
    """Base class for all package errors."""


class ConfigError(NeuralLinearError, ValueError):
    """Invalid configuration or manifest; raised before any work starts."""


class DimensionMismatch(NeuralLinearError, ValueError):
    pass


class NotPositiveDefinite(NeuralLinearError, ArithmeticError):
    pass


class NonFiniteObjective(NeuralLinearError, ArithmeticError):
    """Training objective became NaN or infinite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StuckChain(NeuralLinearError, RuntimeError):
    """Slice sampler could not find an acceptable point; the log density is likely malformed."""


class ParseError(NeuralLinearError, ValueError):
    def __init__(self, message, row=None, col=None):
        loc = "" if row is None else f" (row {row}, col {col})"
        super().__init__(message + loc)
        self.row = row
        self.col = col


class MissingValue(ParseError):
    pass


class UnsupportedK(NeuralLinearError, ValueError):
    pass


class SchemaMismatch(NeuralLinearError, ValueError):
    pass


class PairingError(NeuralLinearError, ValueError):
    pass
