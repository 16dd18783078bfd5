class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class InputError(ValueError):
    """Bad runtime input: empty batch, out-of-range label and the like."""


class ConfigError(ValueError):
    """Invalid experiment, topology or pipeline configuration."""


class FormatError(ValueError):
    """A data file does not follow the expected binary layout."""
