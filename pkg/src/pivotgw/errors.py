"""Exception types shared across the package."""


class PivotgwError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PivotgwError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedError(PivotgwError):
    """The operation is not defined for these inputs (e.g. k != 2)."""


class ResourceLimitError(PivotgwError):
    """An enumeration or sampling budget would be exceeded."""

    def __init__(self, msg, completed=None):
        super().__init__(msg)
        self.completed = completed


class BracketError(PivotgwError):
    """A bisection bracket does not straddle the sought transition."""


class ShrinkRequiredError(InvalidInputError):
    """The distribution has zero-weight colours; restrict the colour set first."""


class InternalError(PivotgwError):
    """An invariant that should be unbreakable was broken (e.g. no fixed point found)."""


class ConfigError(PivotgwError):
    """A config file or CLI argument could not be parsed."""
