"""Neural networks that learn to satisfy weighted CNF constraints."""

from .kernel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
