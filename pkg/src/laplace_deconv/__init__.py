"""Laplace deconvolution by Laguerre-function expansion.

The unknown ``f`` in ``q(t) = int_0^t g(t - s) f(s) ds`` is expanded in the
Laguerre functions ``phi_k``.  In these coordinates the convolution is a
lower-triangular Toeplitz system, and the number of terms is chosen by a
penalized contrast.
"""

__version__ = "0.1.0"

from .design import Observations, shift_delay  # noqa: E402
from .laguerre import CoeffVector, LaguerreBasis, project_function, select_scale_a  # noqa: E402
from .select import EstimatorConfig, ModelFit, fit  # noqa: E402

__all__ = [
    "CoeffVector",
    "EstimatorConfig",
    "LaguerreBasis",
    "ModelFit",
    "Observations",
    "fit",
    "project_function",
    "select_scale_a",
    "shift_delay",
]
