"""Exception types raised across the package."""


class LmmPoseError(Exception):
    """Base class for all package errors."""


class DomainError(LmmPoseError, ValueError):
    """An input lies outside the domain of an operation (e.g. non-positive depth)."""


class DegenerateError(LmmPoseError, ValueError):
    """Input configuration is geometrically degenerate (collinear, coplanar, parallel...)."""


class ValidationError(LmmPoseError, ValueError):
    """Array shapes or values violate a type invariant."""


class ConfigError(LmmPoseError, ValueError):
    """A configuration file or option is invalid."""


class SolverFailure(LmmPoseError, RuntimeError):
    """A solver could not produce any admissible hypothesis."""


class GenerationError(LmmPoseError, RuntimeError):
    """The scene generator could not satisfy its placement constraints."""
