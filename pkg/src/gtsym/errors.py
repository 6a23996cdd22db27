"""Exception and warning types shared across the package."""


class InvalidArgument(ValueError):
    """An input violates a documented precondition."""


class NumericalFailure(RuntimeError):
    """A numerical procedure did not reach its stated accuracy."""


class UnsupportedBipolar(NumericalFailure):
    """A GBZ has points both inside and outside the unit circle."""


class ClassificationAmbiguous(RuntimeError):
    """A classifier found a pattern it cannot map to a single label."""


class DegeneracyWarning(RuntimeWarning):
    """An eigensystem is close to an exceptional point."""


class AccuracyWarning(RuntimeWarning):
    """A result is returned, but an internal accuracy check was marginal."""
