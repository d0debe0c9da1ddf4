"""Exception types shared across the package."""


class GwsegError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(GwsegError, ValueError):
    """A file does not match its documented on-disk format."""


class InvariantError(GwsegError, ValueError):
    """A domain-type invariant is violated."""


class ConfigError(GwsegError, ValueError):
    """A configuration file or value is invalid."""
