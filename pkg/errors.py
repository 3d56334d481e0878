"""
Exception types shared by the segmentation modules and the command line.
"""
from typing import Optional


class RsrgError(Exception):
    """Base class for every error raised on purpose by this package"""


class UsageError(RsrgError, ValueError):
    """A precondition on an argument was violated (exit code 2 on the CLI)"""


class FormatError(RsrgError):
    """Malformed PPM/PGM input"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ModelError(RsrgError):
    """A Gaussian label model with a covariance that is not positive definite"""


class FixedPointError(RsrgError):
    """No nontrivial fixed point of the coupling flow inside the search bracket"""
