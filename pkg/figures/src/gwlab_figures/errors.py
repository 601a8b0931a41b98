class FigureError(Exception):
    """Base class for figure rendering failures."""


class SchemaError(FigureError):
    """Input file does not match its documented schema."""


class EmptySeries(FigureError):
    """No plottable points survive parsing and filtering."""
