"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto stable process exit codes: ConfigError -> 2,
DataError (and subclasses) -> 3, IncompatibilityError -> 4.
"""


class GaborJetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GaborJetError):
    """A parameter or configuration value is invalid."""


class DataError(GaborJetError):
    """Input data is missing, unreadable, or insufficient."""


class FormatError(DataError):
    """A file exists but its contents are not in a supported format."""


class GeometryError(DataError):
    """Eye coordinates or other geometry are degenerate or out of bounds."""


class TooFewCandidatesError(DataError):
    """The candidate pool is too small for the requested number of groups."""


class IncompatibilityError(GaborJetError):
    """Inputs are individually valid but do not fit together."""
