"""
utils/errors.py
---------------
Domain exceptions. Input problems derive from ValueError, failed runs from
RuntimeError, so callers that only know the builtins still catch them.
"""


class GeometryError(ValueError):
    """Invalid curve parameters, chart domain exceeded, phi at x1 = 0."""


class LatticeError(ValueError):
    """Bad Hamming weight, generator index or combinatorial size."""


class ResolutionError(ValueError):
    """A quadrature step or node budget cannot resolve the integrand."""


class IncidenceGateError(RuntimeError):
    """The incidence suite failed, so the construction's hypotheses do not hold."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SearchError(RuntimeError):
    """No candidate lacunarity base passed the incidence suite."""
