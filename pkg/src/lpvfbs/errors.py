"""Exception types raised across the package."""


class LPVFBSError(Exception):
    """Base class for all errors raised by lpvfbs."""


class Unreachable(LPVFBSError):
    """A task-space position cannot be reached by at least one arm."""

    def __init__(self, message, arm=None):
        super().__init__(message)
        self.arm = arm


class NoIntersection(LPVFBSError):
    """The three arm-constraint spheres have no real common point."""


class Singular(LPVFBSError):
    """The linearized Jacobian is singular (workspace boundary)."""


class SingularAtDC(LPVFBSError):
    """The coupled polynomial matrix has an identically zero determinant."""


class NotSettled(LPVFBSError):
    """An impulse response did not decay below tolerance within the cap."""


class DomainError(LPVFBSError):
    """Sample times fall outside the valid knot span."""


class DimensionMismatch(LPVFBSError):
    """Operand shapes do not agree."""


class RankDeficient(LPVFBSError):
    """A least-squares design matrix lost full column rank."""


class SingularKKT(LPVFBSError):
    """The KKT matrix of an equality-constrained least-squares problem is singular."""


class InfeasibleLimits(LPVFBSError):
    """Requested kinematic limits cannot produce a valid feed profile."""


class OutOfWorkspace(LPVFBSError):
    """A trajectory leaves the reachable workspace."""


class ConfigError(LPVFBSError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class WindowError(LPVFBSError):
    """Wraps a lower-level failure with the index of the window it happened in."""

    def __init__(self, window, cause):
        super().__init__(f"window {window}: {type(cause).__name__}: {cause}")
        self.window = window
        self.cause = cause
