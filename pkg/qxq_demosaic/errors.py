"""Exception hierarchy for the QxQ demosaicing toolkit."""


class QxqError(Exception):
    """Base class for all toolkit errors.

    The CLI reports these as a single ``<ClassName>: <message>`` line.
    """

    pass


class FormatError(QxqError):
    """A RAW byte stream does not match its declared geometry."""

    pass


class RangeError(QxqError):
    """A sample value lies outside its allowed range."""

    pass


class ParameterError(QxqError):
    """A numeric parameter is outside its valid domain."""

    pass


class GeometryError(QxqError):
    """Image dimensions are incompatible with the requested operation."""

    pass


class ShapeError(QxqError):
    """Tensor shapes are incompatible."""

    pass


class StateError(QxqError):
    """An object is not in the state an operation requires."""

    pass


class ConfigError(QxqError):
    """A configuration value is invalid."""

    pass


class DataError(QxqError):
    """A dataset is missing, empty, or unusable."""

    pass


class LoadError(QxqError):
    """A checkpoint cannot be loaded into the requested architecture."""

    pass
