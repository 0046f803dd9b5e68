"""The p-elastic energy, its gradient, and first/second variations.

The energy of a closed curve is int (lambda + |k|^p / p) ds.  Its
(L^p, L^p')-gradient in strong form is

    grad = nabla^2(|k|^{p-2} k) + (1/p') |k|^p k - lambda k
           + R(|k|^{p-2} k, tau) tau,

and the flow velocity is -grad.  The weak first variation needs only two
derivatives of k; the second variation is the literal many-term integrand
transcription (no symbolic simplification), with finite-difference
oracles in the test suite as the correctness authority.

For p > 2 the theory requires nonvanishing curvature: |k| is clamped
below at CURVATURE_FLOOR inside the |k|^{p-2} and |k|^{p-4} factors, and
any node where the clamp would activate raises VanishingCurvatureError,
turning the analytic hypothesis into a detectable runtime condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curve import (
    DiscreteCurve,
    Field,
    curvature,
    field_norm,
    nabla,
    node_speeds,
    project_normal,
    unit_tangent,
)
from .errors import InvalidFieldError, VanishingCurvatureError

CURVATURE_FLOOR = 1e-8


@dataclass(frozen=True)
class ElasticParams:
    """Exponent p >= 2 and length weight lambda > 0."""

    p: float
    lam: float = 1.0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    @property
    def p_conj(self) -> float:
        """Dual exponent p' with 1/p' = 1 - 1/p."""
        return self.p / (self.p - 1.0)


def _curvature_data(curve: DiscreteCurve, params: ElasticParams):
    """Curvature field, |k|, and the floored power factors.

    Returns (k values, |k|, |k|^{p-2}, (p-2)|k|^{p-4}).  Raises when the
    p > 2 floor activates on any node.
    """
    k = curvature(curve).values
    kn = curve.ambient.norm(k)
    p = params.p
    if p == 2.0:
        kp2 = np.ones_like(kn)
        c4 = np.zeros_like(kn)
    else:
        if np.any(kn < CURVATURE_FLOOR):
            raise VanishingCurvatureError(
                f"|k| fell below {CURVATURE_FLOOR:.0e} on "
                f"{int(np.sum(kn < CURVATURE_FLOOR))} node(s) with p={p}"
            )
        knc = np.maximum(kn, CURVATURE_FLOOR)
        kp2 = knc ** (p - 2.0)
        c4 = (p - 2.0) * knc ** (p - 4.0)
    return k, kn, kp2, c4


def energy(curve: DiscreteCurve, params: ElasticParams) -> float:
    """sum (lambda + |k_i|^p / p) ds_i."""
    _, ds, _ = node_speeds(curve)
    kn = curve.ambient.norm(curvature(curve).values)
    return float(np.sum((params.lam + kn**params.p / params.p) * ds))


def gradient_field(curve: DiscreteCurve, params: ElasticParams) -> Field:
    """Strong-form gradient as a curve-normal field."""
    amb = curve.ambient
    k, kn, kp2, _ = _curvature_data(curve, params)
    tau = unit_tangent(curve).values
    w = Field(curve, kp2[:, None] * k, is_ambient_tangent=True, is_curve_normal=True)
    lap_w = nabla(curve, w, 2).values
    riem = amb.riemann_apply(curve.points, w.values, tau, tau)
    vals = (
        lap_w
        + (kn**params.p / params.p_conj - params.lam)[:, None] * k
        + riem
    )
    return Field(curve, vals, is_ambient_tangent=True, is_curve_normal=True)


def residual(curve: DiscreteCurve, params: ElasticParams) -> float:
    """L^{p'}(ds) norm of the gradient; the numerical criticality measure."""
    return field_norm(curve, gradient_field(curve, params), params.p_conj, "ds")


def first_variation(curve: DiscreteCurve, params: ElasticParams, psi: Field) -> float:
    """Weak first variation dE[psi] for an ambient-tangent field psi.

    Only the normal part of psi contributes; the expression needs two
    discrete derivatives of k and agrees with <grad, psi_perp> up to the
    stencil order.
    """
    if not psi.is_ambient_tangent:
        raise InvalidFieldError("first_variation needs an ambient-tangent field")
    amb = curve.ambient
    _, ds, _ = node_speeds(curve)
    k, kn, kp2, _ = _curvature_data(curve, params)
    tau = unit_tangent(curve).values
    w = Field(curve, kp2[:, None] * k, is_ambient_tangent=True, is_curve_normal=True)
    psi_perp = project_normal(curve, psi)
    grad_w = nabla(curve, w, 1).values
    grad_psi = nabla(curve, psi_perp, 1).values
    zeroth = (kn**params.p / params.p_conj - params.lam)[:, None] * k + amb.riemann_apply(
        curve.points, w.values, tau, tau
    )
    integrand = -amb.inner(grad_w, grad_psi) + amb.inner(zeroth, psi_perp.values)
    return float(np.sum(integrand * ds))


def second_variation(
    curve: DiscreteCurve, params: ElasticParams, phi: Field, psi: Field
) -> float:
    """Second variation L(phi)[psi] for curve-normal fields.

    Literal transcription of the complete integrand; every term is
    evaluated with the discrete normal connection and ds weights.  The
    length-weight lambda multiplies exactly the terms the length
    functional contributes.  Symmetric in (phi, psi) up to the stencil
    error (exactly, at geodesics).
    """
    for fld, name in ((phi, "phi"), (psi, "psi")):
        if not fld.is_curve_normal:
            raise InvalidFieldError(f"second_variation needs curve-normal {name}")
    amb = curve.ambient
    p, lam = params.p, params.lam
    pts = curve.points
    _, ds, _ = node_speeds(curve)
    k, kn, kp2, c4 = _curvature_data(curve, params)
    tau = unit_tangent(curve).values
    kp = kn**p
    w = kp2[:, None] * k
    ip = amb.inner

    def nab(vals, order=1):
        return nabla(
            curve,
            Field(curve, vals, is_ambient_tangent=True, is_curve_normal=True),
            order,
        ).values

    R = lambda x, y, z: amb.riemann_apply(pts, x, y, z)

    nphi = nab(phi.values)
    npsi = nab(psi.values)
    n2phi = nab(nphi)
    n2psi = nab(npsi)
    nw = nab(w)
    r_phi = R(phi.values, tau, tau)
    r_psi = R(psi.values, tau, tau)

    # recurring bracket: the perp derivative of |k|^{p-2} k along phi,
    # without its <phi,k> k multiples
    bracket_phi = (
        kp2[:, None] * n2phi
        + c4[:, None] * ip(k, n2phi)[:, None] * k
        + kp2[:, None] * r_phi
        + c4[:, None] * ip(k, r_phi)[:, None] * k
    )

    t1 = ip(k, phi.values) * ip(w, n2psi) + ip(bracket_phi, n2psi)

    t2 = ip(-nw, ip(k, phi.values)[:, None] * npsi) - (p - 1.0) * ip(
        nab(ip(phi.values, k)[:, None] * w), npsi
    )

    t3 = (
        ip(-nw, R(phi.values, tau, psi.values))
        + ip(w, R(phi.values, tau, npsi))
        + ip(
            amb.riemann_derivative_apply(pts, phi.values, psi.values, tau, tau)
            + R(psi.values, nphi, tau)
            + R(psi.values, tau, nphi),
            w,
        )
        + ip(r_psi, bracket_phi + (p - 1.0) * kp2[:, None] * ip(phi.values, k)[:, None] * k)
    )

    t4 = ip(-nw, -ip(psi.values, nphi)[:, None] * k + ip(psi.values, k)[:, None] * nphi) + ip(
        nab(kp[:, None] * nphi)
        - nab(ip(w, nphi)[:, None] * k)
        + kp[:, None] * n2phi
        + p * kp2[:, None] * ip(n2phi, k)[:, None] * k
        + p * kp2[:, None] * ip(r_phi, k)[:, None] * k
        + kp[:, None] * r_phi
        + (p + 1.0) * kp[:, None] * ip(phi.values, k)[:, None] * k
        - lam * (n2phi + ip(phi.values, k)[:, None] * k + r_phi),
        psi.values,
    )

    t5 = -(
        ip(w, n2psi)
        + ip(
            (kp / params.p_conj - lam)[:, None] * k + R(w, tau, tau),
            psi.values,
        )
    ) * ip(k, phi.values)

    return float(np.sum((t1 + t2 + t3 + t4 + t5) * ds))


def critical_circle_radius(params: ElasticParams) -> float:
    """Radius of the round critical circle in R^2: ((p-1)/(p lambda))^{1/p}."""
    return ((params.p - 1.0) / (params.p * params.lam)) ** (1.0 / params.p)


def circle_energy(radius: float, params: ElasticParams) -> float:
    """Closed-form energy of a round circle in R^2."""
    return 2.0 * np.pi * params.lam * radius + (2.0 * np.pi / params.p) * radius ** (
        1.0 - params.p
    )
