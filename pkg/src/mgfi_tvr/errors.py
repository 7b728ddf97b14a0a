"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class DegenerateInputError(ValueError):
    """A zero-norm vector reached a cosine or normalisation."""


class FormatError(ValueError):
    """A dataset bundle or checkpoint file is malformed."""
