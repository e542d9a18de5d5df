"""Exception hierarchy. The CLI maps ``DataError`` to exit code 2 and
``NumericError`` to exit code 3."""


class DataError(ValueError):
    pass


class MissingFileError(DataError):
    pass


class RaggedFeaturesError(DataError):
    pass


class LabelValueError(DataError):
    pass


class EdgeIndexError(DataError):
    pass


class MetaMismatchError(DataError):
    pass


class NumericError(ArithmeticError):
    pass


class NonFiniteError(NumericError):
    """A forward value or gradient went NaN/Inf."""
