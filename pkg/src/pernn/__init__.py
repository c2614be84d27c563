"""Physics-encoded residual networks with fixed differentiable physics blocks."""

__version__ = "0.1.0"

from .autodiff import Tape, TapeError, DomainError, check_gradient

__all__ = ["Tape", "TapeError", "DomainError", "check_gradient", "__version__"]
