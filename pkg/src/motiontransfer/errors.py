"""Exception hierarchy shared by all stages.

Each class carries the CLI exit code it maps to so the command-line layer can
translate failures without inspecting messages.
"""


class MotionTransferError(Exception):
    exit_code = 3


class ConfigurationError(MotionTransferError, ValueError):
    """Invalid configuration value (unknown profile, tau out of range, ...)."""


class ContractError(MotionTransferError, ValueError):
    """Shape or argument contract violated."""


class OrderingError(MotionTransferError):
    """Timestep ordering or pipeline-phase ordering violated."""


class BindingError(MotionTransferError, KeyError):
    """A key token could not be bound to a prompt position."""

    def __str__(self):
        return Exception.__str__(self)


class ArchiveLookupError(MotionTransferError, KeyError):
    """Requested record or artifact does not exist."""

    def __str__(self):
        return Exception.__str__(self)


class NumericalError(MotionTransferError, ArithmeticError):
    exit_code = 4


class PhaseError(MotionTransferError):
    """Wraps an error raised inside a named pipeline phase."""

    def __init__(self, phase, cause):
        super().__init__(f"[{phase}] {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
