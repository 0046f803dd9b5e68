"""Discrete closed curves on an ambient and their differential operators.

A curve is N points on the ambient indexed cyclically over the uniform
parameter grid x_i = i/N.  All derivatives are second-order centered
differences in x, converted to arclength derivatives through the node
speeds; curvature and the normal connection compose those with the
ambient tangent projection.  Chord lengths (and hence the ds weights)
use the ambient bilinear form, which is O(h^2)-consistent with geodesic
length and matches the stencil order.

Curves and fields are immutable value objects; operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ambient import AmbientModel, Euclidean, Hyperbolic2, Revolution, Sphere2, ambient_from_string
from .errors import DegenerateCurveError, InvalidFieldError

MIN_NODES = 16
SPEED_FLOOR = 1e-12
CHORD_RATIO_MAX = 10.0


class DiscreteCurve:
    """Closed curve: N ambient points on the uniform parameter grid."""

    def __init__(self, ambient: AmbientModel, points, validate: bool = True):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != ambient.dim:
            raise ValueError(f"points must have shape (N, {ambient.dim})")
        pts.setflags(write=False)
        self.ambient = ambient
        self.points = pts
        self._cache: dict = {}
        if validate:
            self._validate()

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _validate(self):
        if self.n < MIN_NODES:
            raise DegenerateCurveError(f"need at least {MIN_NODES} nodes, got {self.n}")
        self.ambient.check_point(self.points)
        chords = self.ambient.norm(np.roll(self.points, -1, axis=0) - self.points)
        cmin = float(chords.min())
        if cmin <= 0.0:
            raise DegenerateCurveError("curve has a zero-length chord")
        ratio = float(chords.max()) / cmin
        if ratio > CHORD_RATIO_MAX:
            raise DegenerateCurveError(
                f"chord ratio {ratio:.2f} exceeds {CHORD_RATIO_MAX}; reparametrize first"
            )

    def __repr__(self):
        return f"<DiscreteCurve {self.ambient.to_string()} N={self.n}>"


@dataclass(frozen=True)
class Field:
    """Per-node vectors along a curve, with testable tangency flags."""

    curve: DiscreteCurve
    values: np.ndarray
    is_ambient_tangent: bool = False
    is_curve_normal: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.curve.points.shape:
            raise ValueError("field values must match the curve's (N, dim) shape")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def _cdiff(a: np.ndarray) -> np.ndarray:
    """Centered x-derivative on the periodic unit grid: (a_{i+1}-a_{i-1})/(2/N)."""
    n = a.shape[0]
    return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) * (0.5 * n)


def node_speeds(curve: DiscreteCurve):
    """Speeds |dgamma/dx|, ds weights and total length L.

    speed_i is the form norm of the centered difference; ds_i = speed_i / N.
    """
    cached = curve._cache.get("speeds")
    if cached is None:
        d = _cdiff(curve.points)
        speeds = curve.ambient.norm(d)
        if np.any(speeds < SPEED_FLOOR):
            raise DegenerateCurveError("node speed below floor; curve is degenerate")
        ds = speeds / curve.n
        cached = (speeds, ds, float(ds.sum()))
        curve._cache["speeds"] = cached
    return cached


def curve_length(curve: DiscreteCurve) -> float:
    return node_speeds(curve)[2]


def unit_tangent(curve: DiscreteCurve) -> Field:
    """Unit tangent: tangent-projected centered difference, form-normalized."""
    cached = curve._cache.get("tangent")
    if cached is None:
        node_speeds(curve)
        t = curve.ambient.tangent_project(curve.points, _cdiff(curve.points))
        tn = curve.ambient.norm(t)
        if np.any(tn < SPEED_FLOOR):
            raise DegenerateCurveError("tangent collapsed under projection")
        cached = Field(curve, t / tn[..., None], is_ambient_tangent=True)
        curve._cache["tangent"] = cached
    return cached


def _perp(curve: DiscreteCurve, vals: np.ndarray) -> np.ndarray:
    """Project onto T M and remove the tau component (the gamma-perp projector)."""
    amb = curve.ambient
    tau = unit_tangent(curve).values
    v = amb.tangent_project(curve.points, vals)
    return v - amb.inner(v, tau)[..., None] * tau


def curvature(curve: DiscreteCurve) -> Field:
    """Geodesic curvature vector k: the gamma-perp part of d tau / ds."""
    cached = curve._cache.get("curvature")
    if cached is None:
        speeds, _, _ = node_speeds(curve)
        dtau = _cdiff(unit_tangent(curve).values) / speeds[:, None]
        cached = Field(curve, _perp(curve, dtau), is_ambient_tangent=True, is_curve_normal=True)
        curve._cache["curvature"] = cached
    return cached


def nabla(curve: DiscreteCurve, fld: Field, order: int = 1) -> Field:
    """Normal connection along the curve, applied ``order`` times.

    One application is the gamma-perp projection of the arclength
    derivative; the input must be a curve-normal field.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if not fld.is_curve_normal:
        raise InvalidFieldError("nabla needs a curve-normal field")
    speeds, _, _ = node_speeds(curve)
    vals = fld.values
    for _ in range(order):
        vals = _perp(curve, _cdiff(vals) / speeds[:, None])
    return Field(curve, vals, is_ambient_tangent=True, is_curve_normal=True)


def project_normal(curve: DiscreteCurve, fld) -> Field:
    """Normal projection: onto T M, then remove the tangential component."""
    vals = fld.values if isinstance(fld, Field) else np.asarray(fld, dtype=float)
    return Field(curve, _perp(curve, vals), is_ambient_tangent=True, is_curve_normal=True)


def reparametrize_uniform(curve: DiscreteCurve) -> DiscreteCurve:
    """Resample at equal cumulative chordal arclength and retract.

    Periodic piecewise-cubic (4-point Lagrange) interpolation of the
    embedding coordinates against cumulative chord length; node 0 is a
    fixed point of the resampling.
    """
    pts = curve.points
    n = curve.n
    amb = curve.ambient
    chords = amb.norm(np.roll(pts, -1, axis=0) - pts)
    s = np.concatenate([[0.0], np.cumsum(chords)])  # length n+1, s[n] = S
    total = s[n]
    targets = np.arange(n) * (total / n)

    seg = np.searchsorted(s, targets, side="right") - 1  # in [0, n-1]
    seg = np.clip(seg, 0, n - 1)

    # periodic extension of abscissae and points around each segment
    im1 = (seg - 1) % n
    ip1 = (seg + 1) % n
    ip2 = (seg + 2) % n
    x0 = s[seg] - chords[im1]
    x1 = s[seg]
    x2 = s[seg + 1]
    x3 = s[seg + 1] + chords[ip1]

    t = targets
    # 4-point Lagrange basis on (x0, x1, x2, x3)
    l0 = ((t - x1) * (t - x2) * (t - x3)) / ((x0 - x1) * (x0 - x2) * (x0 - x3))
    l1 = ((t - x0) * (t - x2) * (t - x3)) / ((x1 - x0) * (x1 - x2) * (x1 - x3))
    l2 = ((t - x0) * (t - x1) * (t - x3)) / ((x2 - x0) * (x2 - x1) * (x2 - x3))
    l3 = ((t - x0) * (t - x1) * (t - x2)) / ((x3 - x0) * (x3 - x1) * (x3 - x2))
    new = (
        l0[:, None] * pts[im1]
        + l1[:, None] * pts[seg]
        + l2[:, None] * pts[(seg + 1) % n]
        + l3[:, None] * pts[ip2]
    )
    return DiscreteCurve(amb, amb.retract(new))


def field_norm(curve: DiscreteCurve, fld, q: float, measure: str = "ds") -> float:
    """L^q norm of a field with ds or dx weights."""
    if q < 1:
        raise ValueError("q must be >= 1")
    vals = fld.values if isinstance(fld, Field) else np.asarray(fld, dtype=float)
    mags = curve.ambient.norm(vals)
    if measure == "ds":
        w = node_speeds(curve)[1]
    elif measure == "dx":
        w = np.full(curve.n, 1.0 / curve.n)
    else:
        raise ValueError("measure must be 'ds' or 'dx'")
    return float(np.sum(w * mags**q) ** (1.0 / q))


def scale_invariant_norm(curve: DiscreteCurve, j: int, q: float) -> float:
    """Length-weighted curvature norm L^{j+1-1/q} (int |nabla^j k|^q ds)^{1/q}."""
    if j < 0:
        raise ValueError("derivative order j must be >= 0")
    k = curvature(curve)
    fld = k if j == 0 else nabla(curve, k, j)
    length = curve_length(curve)
    return length ** (j + 1.0 - 1.0 / q) * field_norm(curve, fld, q, "ds")


def sum_norm(curve: DiscreteCurve, n: int, q: float) -> float:
    """Sum of scale-invariant norms for orders j = 0..n."""
    return float(sum(scale_invariant_norm(curve, j, q) for j in range(n + 1)))


def curve_normal_frame(curve: DiscreteCurve) -> Field:
    """Smooth unit curve-normal frame.

    On the 2-dimensional ambients the in-surface normal is unique up to
    sign (a quarter rotation of tau); in R^n with n >= 3 a fixed
    coordinate axis is Gram-Schmidt-ed against tau, the axis chosen to
    maximize the minimum angle to tau over the nodes.
    """
    amb = curve.ambient
    tau = unit_tangent(curve).values
    if isinstance(amb, Euclidean) and amb.dim == 2:
        nu = np.stack([-tau[:, 1], tau[:, 0]], axis=-1)
    elif isinstance(amb, Sphere2):
        nu = np.cross(curve.points, tau)
    elif isinstance(amb, Hyperbolic2):
        nu = np.cross(curve.points, tau) * np.array([1.0, 1.0, -1.0])
        nu = nu / amb.norm(nu)[:, None]
    elif isinstance(amb, Revolution):
        nu = np.cross(amb.unit_normal(curve.points), tau)
    else:
        axes = np.eye(amb.dim)
        worst = [float(np.max(np.abs(tau @ e))) for e in axes]
        e = axes[int(np.argmin(worst))]
        if min(worst) > 1.0 - 1e-6:
            raise DegenerateCurveError("no coordinate axis stays transverse to tau")
        raw = e[None, :] - amb.inner(np.broadcast_to(e, tau.shape), tau)[:, None] * tau
        nu = raw / amb.norm(raw)[:, None]
    return Field(curve, nu, is_ambient_tangent=True, is_curve_normal=True)


def perturb_normal(curve: DiscreteCurve, amplitude: float, mode: int, seed: int = 0) -> DiscreteCurve:
    """Push the curve along its normal frame by amplitude * cos(mode 2 pi x).

    Deterministic; the seed argument is accepted for signature stability
    with randomized scenario generators but the cosine profile does not
    consume it.
    """
    del seed
    if amplitude == 0.0:
        return DiscreteCurve(curve.ambient, curve.points)
    x = np.arange(curve.n) / curve.n
    nu = curve_normal_frame(curve).values
    disp = amplitude * np.cos(2.0 * np.pi * mode * x)[:, None] * nu
    return DiscreteCurve(curve.ambient, curve.ambient.exp_map(curve.points, disp))


# -- snapshot serialization (shared wire format with the cli) -----------

def curve_to_snapshot(curve: DiscreteCurve, time: float = 0.0) -> dict:
    return {
        "time": float(time),
        "ambient": curve.ambient.to_string(),
        "points": curve.points.tolist(),
    }


def curve_from_snapshot(doc: dict) -> DiscreteCurve:
    amb = ambient_from_string(doc["ambient"])
    return DiscreteCurve(amb, np.asarray(doc["points"], dtype=float))
