"""Exception types shared across the package.

The CLI maps these onto exit codes: malformed input (arity, shading,
parsing) exits 1, resource budget violations exit 2, failed verification
assertions exit 3.
"""


class RigidpaError(Exception):
    """Base class for all package errors."""


class TangleArityError(RigidpaError):
    """Layer positions or arities do not chain through the stack."""


class ShadingError(RigidpaError):
    """A box sign disagrees with the checkerboard shading at its position."""


class NonFaithfulStateError(RigidpaError):
    """The given state has a kernel, so no GNS inner product exists."""


class DimensionBudgetError(RigidpaError):
    """A requested tower level exceeds the dimension budget."""


class VerificationError(RigidpaError):
    """A structural identity that must hold numerically failed its check."""
