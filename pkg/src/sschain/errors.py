"""Shared exception roots.

Every domain error in the package derives from :class:`SSChainError` so
callers (and the CLI) can catch one base. Subsystems define their own
specific subclasses next to the code that raises them; only the handful
of errors shared across layers live here.
"""


class SSChainError(Exception):
    """Base class for all domain errors raised by this package."""


class NotFoundError(SSChainError):
    """A key, node, name, or account does not exist."""


class CorruptError(SSChainError):
    """Stored bytes fail their content-hash check or cannot be decoded."""
