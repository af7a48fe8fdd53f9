"""Exception hierarchy shared across the library.

Every failure the library raises on purpose derives from RnnkitError so
callers can catch library faults without swallowing programming errors.
"""


class RnnkitError(Exception):
    """Base class for all library errors."""


class DimensionError(RnnkitError):
    """Operand shapes are incompatible; the message names both shapes."""


class DomainError(RnnkitError):
    """Value outside an operation's mathematical domain (log(x<=0), mean of empty)."""


class ContractError(RnnkitError):
    """An API precondition was violated (bad hyperparameter, non-scalar root, ...)."""


class NonFiniteError(RnnkitError):
    """An operation produced NaN or Inf; raised at the op, never propagated."""


class ConfigError(RnnkitError):
    """A run configuration failed to parse or validate."""


class CheckpointError(RnnkitError):
    """A checkpoint file is corrupt (bad checksum, magic, or structure)."""


class ManifestError(RnnkitError):
    """Checkpoint contents do not match the model's parameter manifest."""
