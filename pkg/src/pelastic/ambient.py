"""Ambient Riemannian geometries behind one uniform interface.

Four ambients are provided: Euclidean space R^n, the unit 2-sphere in R^3,
the hyperbolic plane realized as the upper hyperboloid sheet in a
(+,+,-) bilinear space, and analytic surfaces of revolution about the
z-axis.  Every model exposes the same operations on embedding-space
arrays: the (possibly indefinite) bilinear form, tangent projection at a
point, a cheap constraint-restoring retraction, the exponential map, the
Riemann tensor action R(X,Y)Z and its covariant derivative.

All operations are pure and vectorized over leading axes: points and
vectors are arrays of shape (..., dim).  Models are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainExitError, InvalidPointError, RetractionError

# Tolerance for "point lies on the ambient" checks used by operations.
POINT_TOL = 1e-8
# Relative tolerance for "vector is tangent at p" preconditions.
TANGENT_TOL = 1e-8


@dataclass(frozen=True)
class ProfileFunction:
    """Analytic profile f(t) > 0 of a surface of revolution, with derivatives.

    ``t_min`` bounds the admissible z-range from below; operations that
    would evaluate the profile at z < t_min fail with a domain error.
    """

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    d3f: Callable[[np.ndarray], np.ndarray]
    t_min: float
    label: str = "custom"


def default_profile(t_min: float = 1.0) -> ProfileFunction:
    """The funnel profile f(t) = 1 + 1/t."""
    return ProfileFunction(
        f=lambda t: 1.0 + 1.0 / t,
        df=lambda t: -1.0 / t**2,
        d2f=lambda t: 2.0 / t**3,
        d3f=lambda t: -6.0 / t**4,
        t_min=t_min,
        label="1+1/t",
    )


def constant_profile(radius: float, t_min: float = 0.5) -> ProfileFunction:
    """Cylinder profile f(t) = radius; flat test surface (K = 0)."""
    if radius <= 0:
        raise ValueError("cylinder radius must be positive")
    return ProfileFunction(
        f=lambda t: np.full_like(np.asarray(t, dtype=float), radius),
        df=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        d2f=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        d3f=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        t_min=t_min,
        label=f"const:{radius!r}",
    )


class AmbientModel:
    """Base class: bilinear form plus hooks each geometry implements."""

    kind: str = "abstract"
    dim: int = 0

    def __init__(self, dim: int, signature: np.ndarray):
        self.dim = int(dim)
        sig = np.asarray(signature, dtype=float)
        sig.setflags(write=False)
        self.signature = sig

    # -- bilinear form ------------------------------------------------

    def inner(self, u, v):
        """Signature-weighted product sum_i s_i u_i v_i (bilinear, symmetric)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ValueError(
                f"expected vectors with {self.dim} coords, got {u.shape[-1]} and {v.shape[-1]}"
            )
        return np.sum(u * v * self.signature, axis=-1)

    def norm(self, u):
        """Form norm sqrt(<u,u>); negative squares are clipped at zero."""
        return np.sqrt(np.maximum(self.inner(u, u), 0.0))

    # -- constraint handling ------------------------------------------

    def constraint_residual(self, p):
        raise NotImplementedError

    def check_point(self, p, tol: float = POINT_TOL):
        res = np.max(np.atleast_1d(self.constraint_residual(p)))
        if res > tol:
            raise InvalidPointError(
                f"point violates {self.kind} constraint by {res:.3e} (> {tol:.0e})"
            )

    def _check_tangent(self, p, v):
        nrm = self.norm(v)
        dev = np.max(np.atleast_1d(self._tangency_defect(p, v)))
        scale = max(float(np.max(np.atleast_1d(nrm))), 1e-300)
        if dev > TANGENT_TOL * scale:
            raise ValueError(
                f"vector is not tangent to {self.kind}: defect {dev:.3e} vs |v| {scale:.3e}"
            )

    def _tangency_defect(self, p, v):
        """|<v, normal directions>| at p; zero for Euclidean."""
        return np.zeros(np.asarray(v).shape[:-1])

    # -- geometry hooks ------------------------------------------------

    def tangent_project(self, p, v):
        raise NotImplementedError

    def retract(self, q):
        raise NotImplementedError

    def exp_map(self, p, v):
        raise NotImplementedError

    def sectional_curvature(self, p):
        """Gauss curvature K(p); constant for the space forms."""
        raise NotImplementedError

    def curvature_derivative(self, p, w):
        """Directional derivative partial_w K at p; zero on space forms."""
        return np.zeros(np.asarray(w).shape[:-1])

    # -- curvature tensor ----------------------------------------------

    def riemann_apply(self, p, x, y, z):
        """R(X,Y)Z = K(p) (<Y,Z> X - <X,Z> Y) for these ambients."""
        self.check_point(p)
        for v in (x, y, z):
            self._check_tangent(p, v)
        k = self.sectional_curvature(p)
        out = np.asarray(k)[..., None] * (
            self.inner(y, z)[..., None] * np.asarray(x, dtype=float)
            - self.inner(x, z)[..., None] * np.asarray(y, dtype=float)
        )
        return out

    def riemann_derivative_apply(self, p, w, x, y, z):
        """(D_W R)(X,Y)Z; vanishes on space forms, profile-driven otherwise."""
        self.check_point(p)
        for v in (w, x, y, z):
            self._check_tangent(p, v)
        dk = self.curvature_derivative(p, w)
        return np.asarray(dk)[..., None] * (
            self.inner(y, z)[..., None] * np.asarray(x, dtype=float)
            - self.inner(x, z)[..., None] * np.asarray(y, dtype=float)
        )

    # -- fast-kernel handshake ------------------------------------------

    def kernel_id(self) -> Optional[tuple]:
        """(kind code, profile mode, parameters) for the jitted flow kernel.

        Returns None when no fused kernel supports this model; the flow
        then falls back to the pure-numpy stepper.
        """
        return None

    def to_string(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.to_string()}>"


class Euclidean(AmbientModel):
    """Flat R^n with the standard product; every map is trivial."""

    kind = "euclidean"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("Euclidean ambient needs dimension >= 2")
        super().__init__(n, np.ones(n))

    def constraint_residual(self, p):
        return np.zeros(np.asarray(p).shape[:-1])

    def tangent_project(self, p, v):
        self.check_point(p)
        return np.asarray(v, dtype=float).copy()

    def retract(self, q):
        return np.asarray(q, dtype=float).copy()

    def exp_map(self, p, v):
        self.check_point(p)
        self._check_tangent(p, v)
        return np.asarray(p, dtype=float) + np.asarray(v, dtype=float)

    def sectional_curvature(self, p):
        return np.zeros(np.asarray(p).shape[:-1])

    def kernel_id(self):
        return (0, 0, 0.0, 0.0)

    def to_string(self):
        return f"euclidean({self.dim})"


class Sphere2(AmbientModel):
    """Unit 2-sphere in R^3."""

    kind = "sphere2"

    def __init__(self):
        super().__init__(3, np.ones(3))

    def constraint_residual(self, p):
        p = np.asarray(p, dtype=float)
        return np.abs(np.sum(p * p, axis=-1) - 1.0)

    def _tangency_defect(self, p, v):
        return np.abs(self.inner(p, v))

    def tangent_project(self, p, v):
        self.check_point(p)
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        return v - self.inner(v, p)[..., None] * p

    def retract(self, q):
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q, axis=-1)
        if np.any(n < 1e-14):
            raise RetractionError("cannot radially retract the origin onto the sphere")
        return q / n[..., None]

    def exp_map(self, p, v):
        self.check_point(p)
        self._check_tangent(p, v)
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        th = np.linalg.norm(v, axis=-1)
        small = th < 1e-300
        safe = np.where(small, 1.0, th)
        out = np.cos(th)[..., None] * p + (np.sin(th) / safe)[..., None] * v
        return np.where(small[..., None], p, out)

    def sectional_curvature(self, p):
        return np.ones(np.asarray(p).shape[:-1])

    def kernel_id(self):
        return (1, 0, 0.0, 0.0)

    def to_string(self):
        return "sphere2"


class Hyperbolic2(AmbientModel):
    """Hyperbolic plane as the upper hyperboloid sheet.

    Points satisfy <p,p> = -1 with the (+,+,-) form and p_w > 0.  All
    projection/curvature formulas of the embedded setting carry over
    verbatim with the indefinite form, giving closed-form geodesics and
    exact constraint checks; curvature is identically -1.
    """

    kind = "hyperbolic2"

    def __init__(self):
        super().__init__(3, np.array([1.0, 1.0, -1.0]))

    def constraint_residual(self, p):
        p = np.asarray(p, dtype=float)
        res = np.abs(self.inner(p, p) + 1.0)
        # Lower sheet counts as off-manifold outright.
        return np.where(p[..., 2] > 0, res, np.inf)

    def _tangency_defect(self, p, v):
        return np.abs(self.inner(p, v))

    def tangent_project(self, p, v):
        self.check_point(p)
        v = np.asarray(v, dtype=float)
        return v + self.inner(v, p)[..., None] * np.asarray(p, dtype=float)

    def retract(self, q):
        q = np.asarray(q, dtype=float)
        s = -self.inner(q, q)
        if np.any(s <= 0):
            raise RetractionError("vector has non-negative form square; not retractable")
        if np.any(q[..., 2] <= 0):
            raise RetractionError("point is not on the upper sheet")
        return q / np.sqrt(s)[..., None]

    def exp_map(self, p, v):
        self.check_point(p)
        self._check_tangent(p, v)
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        th = self.norm(v)  # tangent vectors are spacelike
        small = th < 1e-300
        safe = np.where(small, 1.0, th)
        out = np.cosh(th)[..., None] * p + (np.sinh(th) / safe)[..., None] * v
        return np.where(small[..., None], p, out)

    def sectional_curvature(self, p):
        return -np.ones(np.asarray(p).shape[:-1])

    def kernel_id(self):
        return (2, 0, 0.0, 0.0)

    def to_string(self):
        return "hyperbolic2"


class Revolution(AmbientModel):
    """Surface of revolution x^2 + y^2 = f(z)^2 about the z-axis."""

    kind = "revolution"

    def __init__(self, profile: Optional[ProfileFunction] = None):
        super().__init__(3, np.ones(3))
        self.profile = profile if profile is not None else default_profile()

    # radial distance and profile value, with domain checking
    def _rz(self, p):
        p = np.asarray(p, dtype=float)
        z = p[..., 2]
        if np.any(z < self.profile.t_min):
            raise DomainExitError(
                f"z below profile domain t_min={self.profile.t_min}"
            )
        return np.hypot(p[..., 0], p[..., 1]), z

    def constraint_residual(self, p):
        p = np.asarray(p, dtype=float)
        z = p[..., 2]
        bad = z < self.profile.t_min
        zs = np.where(bad, self.profile.t_min, z)
        res = np.abs(p[..., 0] ** 2 + p[..., 1] ** 2 - self.profile.f(zs) ** 2)
        return np.where(bad, np.inf, res)

    def unit_normal(self, p):
        """(-cos t, -sin t, f'(z)) / sqrt(1 + f'(z)^2) at angle t."""
        r, z = self._rz(p)
        p = np.asarray(p, dtype=float)
        fp = self.profile.df(z)
        den = np.sqrt(1.0 + fp * fp)
        nu = np.stack(
            [-p[..., 0] / r, -p[..., 1] / r, fp], axis=-1
        ) / den[..., None]
        return nu

    def _tangency_defect(self, p, v):
        return np.abs(self.inner(self.unit_normal(p), v))

    def tangent_project(self, p, v):
        self.check_point(p)
        nu = self.unit_normal(p)
        v = np.asarray(v, dtype=float)
        return v - self.inner(v, nu)[..., None] * nu

    def retract(self, q):
        q = np.asarray(q, dtype=float)
        z = q[..., 2]
        if np.any(z < self.profile.t_min):
            raise RetractionError(
                f"z below profile domain t_min={self.profile.t_min}"
            )
        r = np.hypot(q[..., 0], q[..., 1])
        if np.any(r < 1e-14):
            raise RetractionError("point on the axis cannot be retracted")
        scale = self.profile.f(z) / r
        out = q.copy()
        out[..., 0] *= scale
        out[..., 1] *= scale
        return out

    def exp_map(self, p, v, substeps: int = 32):
        """Numerical geodesic: embedding-space RK4 with per-substep retraction.

        The acceleration is the unique multiple of the surface normal that
        keeps the second derivative of the constraint zero; each substep
        covers at most |v|/substeps of parameter and ends with a retraction.
        """
        self.check_point(p)
        self._check_tangent(p, v)
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if float(np.max(np.linalg.norm(v, axis=-1), initial=0.0)) == 0.0:
            return p.copy()

        def acc(x, w):
            z = x[..., 2]
            if np.any(z < self.profile.t_min):
                raise DomainExitError("geodesic left the profile domain")
            f = self.profile.f(z)
            fp = self.profile.df(z)
            fpp = self.profile.d2f(z)
            # constraint g = x^2 + y^2 - f(z)^2; lambda from d^2 g/dt^2 = 0
            hww = 2.0 * (w[..., 0] ** 2 + w[..., 1] ** 2) - 2.0 * (
                fp * fp + f * fpp
            ) * w[..., 2] ** 2
            nu = self.unit_normal(x)
            gx = np.stack(
                [2.0 * x[..., 0], 2.0 * x[..., 1], -2.0 * f * fp], axis=-1
            )
            lam = -hww / np.sum(gx * nu, axis=-1)
            return lam[..., None] * nu

        x = p.copy()
        w = v.copy()
        h = 1.0 / substeps
        for _ in range(substeps):
            k1x, k1w = w, acc(x, w)
            k2x, k2w = w + 0.5 * h * k1w, acc(x + 0.5 * h * k1x, w + 0.5 * h * k1w)
            k3x, k3w = w + 0.5 * h * k2w, acc(x + 0.5 * h * k2x, w + 0.5 * h * k2w)
            k4x, k4w = w + h * k3w, acc(x + h * k3x, w + h * k3w)
            x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            w = w + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            try:
                x = self.retract(x)
            except RetractionError as exc:
                raise DomainExitError(str(exc)) from exc
            w = w - self.inner(w, self.unit_normal(x))[..., None] * self.unit_normal(x)
        return x

    def gaussian_curvature(self, p):
        """K = -f''(z) / (f(z) (1 + f'(z)^2)^2) evaluated at the point."""
        _, z = self._rz(p)
        f = self.profile.f(z)
        fp = self.profile.df(z)
        fpp = self.profile.d2f(z)
        return -fpp / (f * (1.0 + fp * fp) ** 2)

    def gaussian_curvature_z_derivative(self, z):
        """Analytic d/dz of the Gauss curvature; needs the third derivative."""
        z = np.asarray(z, dtype=float)
        if np.any(z < self.profile.t_min):
            raise DomainExitError("z below profile domain")
        f = self.profile.f(z)
        fp = self.profile.df(z)
        fpp = self.profile.d2f(z)
        fppp = self.profile.d3f(z)
        u = 1.0 + fp * fp
        return (
            -fppp / (f * u**2)
            + fpp * fp / (f**2 * u**2)
            + 4.0 * fp * fpp**2 / (f * u**3)
        )

    def sectional_curvature(self, p):
        return self.gaussian_curvature(p)

    def curvature_derivative(self, p, w):
        _, z = self._rz(p)
        w = np.asarray(w, dtype=float)
        return self.gaussian_curvature_z_derivative(z) * w[..., 2]

    def kernel_id(self):
        if self.profile.label == "1+1/t":
            return (3, 0, 0.0, self.profile.t_min)
        if self.profile.label.startswith("const:"):
            return (3, 1, float(self.profile.label.split(":", 1)[1]), self.profile.t_min)
        return None

    def to_string(self):
        return f"revolution({self.profile.label})"


def gaussian_curvature(ambient: Revolution, p):
    """Module-level alias for the revolution-surface curvature."""
    if not isinstance(ambient, Revolution):
        raise ValueError("gaussian_curvature is defined for revolution surfaces")
    return ambient.gaussian_curvature(p)


def ambient_from_string(text: str) -> AmbientModel:
    """Inverse of AmbientModel.to_string for the built-in models."""
    text = text.strip()
    if text == "sphere2":
        return Sphere2()
    if text == "hyperbolic2":
        return Hyperbolic2()
    if text.startswith("euclidean(") and text.endswith(")"):
        return Euclidean(int(text[len("euclidean(") : -1]))
    if text.startswith("revolution(") and text.endswith(")"):
        label = text[len("revolution(") : -1]
        if label == "1+1/t":
            return Revolution(default_profile())
        if label.startswith("const:"):
            return Revolution(constant_profile(float(label.split(":", 1)[1])))
        raise ValueError(f"cannot reconstruct revolution profile {label!r}")
    raise ValueError(f"unknown ambient string {text!r}")
