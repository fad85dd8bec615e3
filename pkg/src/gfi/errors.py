"""Exception types shared across the package."""


class GfiError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GfiError):
    """A registry entry, layer id, or option is invalid or unknown."""


class InputError(GfiError):
    """An input tensor, mask, box, or argument violates a precondition."""


class IngestionError(InputError):
    """An image or annotation file cannot be read or parsed."""


class FormatError(GfiError):
    """A serialized artifact (mask file, config file) is malformed."""


class SolverError(GfiError):
    """The optimizer produced a non-finite loss; carries the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
