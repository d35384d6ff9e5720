"""Shared exception types."""


class ForgetCurveError(Exception):
    """Base class for library errors."""


class FormatError(ForgetCurveError):
    """An input file violates the expected schema."""


class NoDataError(ForgetCurveError):
    """A read or filter produced no usable rows."""


class ModelFormatError(ForgetCurveError):
    """A serialized model file is structurally invalid."""


class TrainingDivergedError(ForgetCurveError):
    """Mean training loss became non-finite."""
