"""Exception types shared across the toolkit."""


class MvxError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(MvxError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(MvxError):
    """A computation produced a non-finite value or failed to converge."""


class ContractError(MvxError):
    """An API precondition was violated by the caller."""


class DomainError(MvxError):
    """An input value lies outside the mathematical domain of the operation."""


class CapacityError(MvxError):
    """A documented size guard was exceeded (e.g. powerset enumeration)."""


class ConfigError(MvxError):
    """Configuration parsing or validation failed; message names the key path."""


class FormatError(MvxError):
    """A binary file is malformed; message carries the byte offset."""


class UnsupportedMetricError(MvxError):
    """The requested evaluation metric is not defined for this model class."""


class DegenerateLabelError(MvxError):
    """Labelled data does not contain at least two classes."""
