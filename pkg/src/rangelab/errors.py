"""Exceptions that map onto CLI exit codes."""


class InvalidConfig(ValueError):
    """Configuration or distribution rejected (CLI exit code 2)."""


class ResourceLimit(RuntimeError):
    """A computation would exceed its memory or grid budget (exit code 3)."""


class IdentityCheckFailure(AssertionError):
    """An exact combinatorial identity failed on sampled data (exit code 4)."""
