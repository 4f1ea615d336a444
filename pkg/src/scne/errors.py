"""Exception hierarchy shared by every module."""


class ScneError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ScneError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class ShapeError(ScneError, ValueError):
    """Array dimensions do not agree."""


class ParameterError(ScneError, ValueError):
    """A configuration or call parameter is outside its admissible range."""


class UndefinedCorrelationError(ScneError, ValueError):
    """Correlation requested for a constant vector."""


class RankError(ScneError, ValueError):
    """A matrix that must be invertible is singular."""


class SpecError(ScneError, ValueError):
    """A feature-group specification does not partition the columns."""


class DataError(ScneError, ValueError):
    """A data file is missing, ragged or unparseable."""


class DegenerateCandidateError(ScneError, ValueError):
    """A candidate hidden node has an all-zero output vector."""


class ConstructionError(ScneError, RuntimeError):
    """Network growth ran out of admissible candidates before adding a node."""


class ConfigError(ScneError, ValueError):
    """An experiment configuration is invalid; the message names the field path."""
