"""Exception hierarchy shared by all pipeline stages."""


class SkelgaitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SkelgaitError, ValueError):
    """Input data violates an operation's precondition."""


class InvalidDepthError(InvalidInputError):
    """A depth value is zero, negative or otherwise unusable."""


class ConfigurationError(SkelgaitError, ValueError):
    """Configuration or shape mismatch between collaborating objects."""


class UnfixableRowError(SkelgaitError):
    """A joint-coordinate row does not carry enough data to be corrected."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class MissingJointError(InvalidInputError):
    """A skeleton lacks a joint required by a feature."""

    def __init__(self, joint):
        super().__init__(f"joint {joint!s} is missing")
        self.joint = joint


class DegenerateVectorError(InvalidInputError):
    """A zero-norm vector was passed where a direction is required."""


class InvalidDatasetError(InvalidInputError):
    """A training set cannot support the requested classifier."""


class UnavailableSignalError(InvalidInputError):
    """A derived signal cannot be computed because its inputs are missing."""


class ConvergenceWarning(UserWarning):
    """The optimizer stopped at its iteration limit before reaching tolerance."""
