"""Sequential mini-stack phase linking for InSAR time series."""
from seqlink._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
