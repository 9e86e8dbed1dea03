"""Exception hierarchy shared by all svlab modules.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class SvlabError(Exception):
    """Base class for all svlab errors."""


class UsageError(SvlabError):
    """Bad call: invalid configuration, flags or operation usage."""


class ShapeError(UsageError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(UsageError):
    """Invalid model / pipeline configuration value."""


class DataError(SvlabError):
    """Bad input data: missing ids, malformed records, empty corpora."""


class FormatError(DataError):
    """A file does not conform to its declared format."""


class NumericError(SvlabError):
    """Numeric degeneracy: NaN loss, singular covariance, zero spread."""
