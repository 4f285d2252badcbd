"""Neural linear regression models with exact Bayesian output layers and a benchmark harness."""
from ._backend import BACKEND, COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND", "COMPILED", "__version__"]
