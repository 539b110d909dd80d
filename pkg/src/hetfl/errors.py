"""Exception hierarchy shared by every module of the simulator."""


class HetFLError(Exception):
    """Base class for all simulator errors."""


class ShapeError(HetFLError, ValueError):
    """Array extents do not line up."""


class ParameterError(HetFLError, ValueError):
    """A scalar hyperparameter is outside its admissible range."""


class DataError(HetFLError, ValueError):
    """Dataset content is empty or inconsistent with the request."""


class ConfigError(HetFLError, ValueError):
    """Experiment configuration is invalid."""


class ProtocolError(HetFLError, RuntimeError):
    """A round stage was invoked out of order."""
