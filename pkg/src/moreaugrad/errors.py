"""Exception hierarchy shared by every module."""


class MoreauGradError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MoreauGradError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidPartitionError(InvalidInputError):
    """Group partition is overlapping, incomplete, or out of range."""


class DegenerateInputError(InvalidInputError):
    """Input for which the requested quantity is undefined (e.g. an all-zero map)."""


class FormatError(MoreauGradError):
    """A weight or tensor file could not be parsed."""


class TrainingFailedError(MoreauGradError):
    """Trainer did not reach the target accuracy within its epoch budget."""

    def __init__(self, message, accuracy):
        super().__init__(f"{message} (held-out accuracy {accuracy:.4f})")
        self.accuracy = accuracy


class DivergenceError(MoreauGradError):
    """Envelope iterates left the trust region; rho is likely too large."""


class PreconditionError(MoreauGradError):
    """Attack input is not classified as the attacked class."""


class UnsupportedInterpreterError(MoreauGradError):
    """The attack cannot drive the requested interpreter."""
