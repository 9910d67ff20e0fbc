"""Exception types raised across the package."""


class ScalePromptError(Exception):
    """Base class for all package errors."""


class ShapeError(ScalePromptError, ValueError):
    pass


class EmptyRow(ScalePromptError, ValueError):
    """A softmax row had every entry masked."""


class EmptyInput(ScalePromptError, ValueError):
    """An operation needing at least one valid pixel received none."""


class EmptySparseInput(EmptyInput):
    """Fewer than two sparse measurements available for alignment."""


class ScaleDegenerate(ScalePromptError, ArithmeticError):
    """The relative prediction is constant over the anchors; scale is unidentifiable."""


class ConfigError(ScalePromptError, ValueError):
    pass


class FormatError(ScalePromptError, ValueError):
    """Malformed file on disk."""


class DataError(ScalePromptError, ValueError):
    """Data that cannot be written faithfully (e.g. NaN at a valid pixel)."""


class FitAborted(ScalePromptError, FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
