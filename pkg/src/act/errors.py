"""Exception taxonomy shared by all act modules.

Every error raised by this package derives from ActError and carries a
short machine-parsable ``category`` used by the CLI for exit reporting.
"""


class ActError(Exception):
    category = "error"


class ShapeError(ActError, ValueError):
    """Tensor shapes or sequence lengths violate an operation's contract."""

    category = "shape"


class ParameterError(ActError, ValueError):
    """An argument is outside its documented domain (rate, preset name, ...)."""

    category = "parameter"


class ConfigError(ActError, ValueError):
    """Model/dataset configurations disagree (feature width, ensemble members)."""

    category = "config"


class DataError(ActError, ValueError):
    """A dataset or checkpoint file failed validation on load."""

    category = "data"


class NumericsError(ActError, RuntimeError):
    """A numeric invariant broke at runtime (non-finite gradient, ...)."""

    category = "numerics"
