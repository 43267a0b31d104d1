"""Exception hierarchy.

Every error raised by the package derives from :class:`DeconvolutionError`.
Validation problems (bad input, impossible configuration) are also
``ValueError`` subclasses; numerical failures are ``ArithmeticError``
subclasses.  The CLI maps the two families to distinct exit codes.
"""

from contextlib import contextmanager


class DeconvolutionError(Exception):
    """Base class.  ``stage`` names the pipeline step that failed, if known."""

    stage = None

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class ValidationError(DeconvolutionError, ValueError):
    pass


class NumericalError(DeconvolutionError, ArithmeticError):
    pass


class EmptyAfterShift(ValidationError):
    pass


class NearSingular(NumericalError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


class DegenerateRegression(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class NegativeVariance(NumericalError):
    pass


class MonteCarloFailure(NumericalError):
    pass


@contextmanager
def stage(name):
    """Tag any package error escaping the block with the stage ``name``."""
    try:
        yield
    except DeconvolutionError as err:
        if err.stage is None:
            err.stage = name
        raise
