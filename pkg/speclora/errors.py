"""
Error hierarchy for speclora.

Every error carries the CLI exit code it maps to, and also derives from the
closest builtin so library callers can catch ValueError / ArithmeticError.
"""

from typing import Optional


class SpecLoraError(Exception):
    """Base class for all speclora errors"""

    exit_code = 1


class ConfigError(SpecLoraError, ValueError):
    """Invalid configuration value or combination"""

    exit_code = 2


class DomainError(SpecLoraError, ValueError):
    """Input outside an operation's mathematical domain"""

    exit_code = 2


class DimensionError(SpecLoraError, ValueError):
    """Shape or length mismatch"""

    exit_code = 3


class NumericError(SpecLoraError, ArithmeticError):
    """
    Numerical failure: SVD non-convergence or training divergence.

    Attributes:
        residual: off-diagonal mass left when an iteration cap was hit
        step: optimizer step at which a loss became non-finite
    """

    exit_code = 4

    def __init__(self, message: str, residual: Optional[float] = None, step: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class FormatError(SpecLoraError, ValueError):
    """Malformed tensor file header"""

    exit_code = 2

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DataError(SpecLoraError, ValueError):
    """Non-finite value in a tensor payload"""

    exit_code = 2

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (flat index {index})")
        self.index = index


class LengthError(SpecLoraError, ValueError):
    """Tensor file shorter or longer than its header declares"""

    exit_code = 2


class ContainerError(SpecLoraError, ValueError):
    """Weight container manifest inconsistent with its files"""

    exit_code = 2

    def __init__(self, message: str, tensor: Optional[str] = None):
        super().__init__(message)
        self.tensor = tensor


class VerificationError(SpecLoraError, AssertionError):
    """Analytic gradients disagree with finite differences"""

    exit_code = 5
