"""
surfaces.py
-----------
Interchangeable C^2 hypersurfaces, each given near the origin as the graph
of a function Phi over a (d-1)-dimensional chart:
- Paraboloid  : Phi(w) = |w|^2                     (default)
- SphereCap   : lower cap of the sphere of radius 1/2 through the origin
- QuadraticForm surface: Phi(w) = C(w, w) for a user form with C(e1, e1) = 1

All expose the same value / gradient / hessian interface so the point lift
and the cap quadrature never care which one is active.

Lifted points store the graph value in coordinate 2 (index 1): the graph
point over w = (w1, w2, ..., w_{d-1}) is (w1, Phi(w), w2, ..., w_{d-1}).
With the offsets (t, t^3, ..., t^d) this puts Phi next to t, exactly where
the moment curve carries t^2.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Literal, Optional

import numpy as np

from utils.errors import GeometryError

SurfaceName = Literal["paraboloid", "sphere", "quadratic"]


class Hypersurface(ABC):
    """Graph of Phi over the ball of radius `domain_radius` in R^{d-1}."""

    name: str = "surface"

    def __init__(self, d: int, domain_radius: float):
        if d < 2:
            raise GeometryError(f"ambient dimension must be >= 2, got {d}")
        self.d = d
        self.domain_radius = float(domain_radius)

    @property
    @abstractmethod
    def quadratic_form(self) -> np.ndarray:
        """Symmetric (d-1)x(d-1) C with Phi(w) = C(w, w) + o(|w|^2)."""

    @abstractmethod
    def value(self, omega: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def gradient(self, omega: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, omega: np.ndarray) -> np.ndarray: ...

    def check_domain(self, omega: np.ndarray) -> None:
        omega = np.atleast_2d(omega)
        radius = np.linalg.norm(omega, axis=-1).max(initial=0.0)
        if radius > self.domain_radius:
            raise GeometryError(
                f"{self.name}: chart radius {radius:.3g} exceeds domain radius {self.domain_radius}"
            )

    def embed(self, omega: np.ndarray, value: np.ndarray) -> np.ndarray:
        """Assemble graph points; `omega` is (..., d-1), `value` is (...)."""
        omega = np.asarray(omega, dtype=float)
        value = np.asarray(value, dtype=float)
        return np.concatenate([omega[..., :1], value[..., None], omega[..., 1:]], axis=-1)

    def point(self, omega: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        self.check_domain(omega)
        return self.embed(omega, self.value(omega))

    def area_element(self, omega: np.ndarray) -> np.ndarray:
        grad = self.gradient(omega)
        return np.sqrt(1.0 + np.sum(grad * grad, axis=-1))

    def quadratic_residual(self, omega: np.ndarray) -> np.ndarray:
        """Phi(w) - C(w, w); o(|w|^2) as w -> 0."""
        omega = np.asarray(omega, dtype=float)
        form = np.einsum("...i,ij,...j->...", omega, self.quadratic_form, omega)
        return self.value(omega) - form


class Paraboloid(Hypersurface):
    """Phi(w) = |w|^2, so C is the identity."""

    name = "paraboloid"

    def __init__(self, d: int, domain_radius: float = 1.0):
        super().__init__(d, domain_radius)

    @property
    def quadratic_form(self) -> np.ndarray:
        return np.eye(self.d - 1)

    def value(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.sum(omega * omega, axis=-1)

    def gradient(self, omega):
        return 2.0 * np.asarray(omega, dtype=float)

    def hessian(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.broadcast_to(2.0 * np.eye(self.d - 1), omega.shape[:-1] + (self.d - 1, self.d - 1))


class SphereCap(Hypersurface):
    """Sphere of radius 1/2 tangent to the chart at the origin (C = identity)."""

    name = "sphere"
    rho = 0.5

    def __init__(self, d: int, domain_radius: float = 0.4):
        if domain_radius >= self.rho:
            raise GeometryError("sphere cap chart must stay inside the equator")
        super().__init__(d, domain_radius)

    @property
    def quadratic_form(self) -> np.ndarray:
        return np.eye(self.d - 1) / (2.0 * self.rho)

    def _depth(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.sqrt(self.rho ** 2 - np.sum(omega * omega, axis=-1))

    def value(self, omega):
        omega = np.asarray(omega, dtype=float)
        sq = np.sum(omega * omega, axis=-1)
        # rho - sqrt(rho^2 - |w|^2) without the cancellation at small |w|
        return sq / (self.rho + self._depth(omega))

    def gradient(self, omega):
        omega = np.asarray(omega, dtype=float)
        return omega / self._depth(omega)[..., None]

    def hessian(self, omega):
        omega = np.asarray(omega, dtype=float)
        s = self._depth(omega)[..., None, None]
        eye = np.eye(self.d - 1)
        outer = omega[..., :, None] * omega[..., None, :]
        return eye / s + outer / s ** 3


class QuadraticSurface(Hypersurface):
    """Phi(w) = C(w, w) for a symmetric C normalized by C(e1, e1) = 1."""

    name = "quadratic"

    def __init__(self, d: int, form: Optional[np.ndarray] = None, domain_radius: float = 1.0):
        super().__init__(d, domain_radius)
        if form is None:
            form = np.diag(1.0 / np.arange(1, d))
        form = np.asarray(form, dtype=float)
        if form.shape != (d - 1, d - 1):
            raise GeometryError(f"quadratic form must be {(d - 1, d - 1)}, got {form.shape}")
        if not np.allclose(form, form.T, rtol=0.0, atol=1e-14):
            raise GeometryError("quadratic form must be symmetric")
        if abs(form[0, 0] - 1.0) > 1e-12:
            raise GeometryError("quadratic form must satisfy C(e1, e1) = 1")
        self._form = form

    @property
    def quadratic_form(self) -> np.ndarray:
        return self._form

    def value(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.einsum("...i,ij,...j->...", omega, self._form, omega)

    def gradient(self, omega):
        omega = np.asarray(omega, dtype=float)
        return 2.0 * omega @ self._form

    def hessian(self, omega):
        omega = np.asarray(omega, dtype=float)
        return np.broadcast_to(2.0 * self._form, omega.shape[:-1] + (self.d - 1, self.d - 1))


def get_surface(name: SurfaceName = "paraboloid", d: int = 2, **kwargs) -> Hypersurface:
    if name == "sphere":
        return SphereCap(d, **kwargs)
    if name == "quadratic":
        return QuadraticSurface(d, **kwargs)
    if name == "paraboloid":
        return Paraboloid(d, **kwargs)
    raise GeometryError(f"unknown surface {name!r} (use paraboloid, sphere or quadratic)")
