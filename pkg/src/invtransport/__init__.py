"""Volumetric path tracing with score-function derivatives, inverse
scattering by stochastic gradient descent, and image-to-parameter
regressor networks trained through the renderer."""

from . import _config  # noqa: F401  (sets numba environment before numba loads)

__version__ = "0.1.0"
