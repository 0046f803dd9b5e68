"""Post-hoc analysis of flow trajectories and curvature norms.

Provides the empirical decay-exponent fit (log energy gap against log
residual), a consistency check of the curvature evolution identity on
dense constant-dt segments, interpolation-quotient probes and a
tabulation of the scale-invariant curvature norms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .curve import DiscreteCurve, curvature, field_norm, nabla, node_speeds, project_normal, scale_invariant_norm, unit_tangent, Field
from .energy import ElasticParams, gradient_field
from .errors import InsufficientDataError, InvalidSegmentError
from .flow import FlowConfig, FlowState, FlowTrajectory, Outcome, make_state, _rk4_update

MIN_FIT_SAMPLES = 10
ENERGY_GAP_FLOOR = 1e-12


@dataclass(frozen=True)
class LojaFit:
    """Fit of log(E - E_inf) = const + slope * log(residual).

    theta_hat = 1 - 1/slope is the implied decay exponent whenever the
    slope exceeds 1 (NaN otherwise); r_squared is the usual coefficient of
    determination of the least-squares line; window is the fitted time span.
    """

    theta_hat: float
    slope: float
    r_squared: float
    window: tuple


def lojasiewicz_fit(trajectory: FlowTrajectory, e_inf: float,
                    window_fraction: float = 0.5) -> LojaFit:
    """Least-squares exponent fit on the trailing part of a trajectory.

    Uses the last `window_fraction` of the samples whose energy exceeds
    e_inf by more than a floor; needs at least MIN_FIT_SAMPLES of them.
    """
    if trajectory.outcome not in (Outcome.CONVERGED, Outcome.MAX_TIME):
        raise InvalidSegmentError("fit needs a Converged or MaxTimeReached trajectory")
    usable = [
        s for s in trajectory.samples
        if s.energy - e_inf > ENERGY_GAP_FLOOR and s.residual > 0.0
    ]
    usable = usable[int(len(usable) * (1.0 - window_fraction)):]
    if len(usable) < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"only {len(usable)} usable samples; need {MIN_FIT_SAMPLES}"
        )
    gaps = np.array([s.energy - e_inf for s in usable])
    if np.min(gaps) <= 0:
        raise ValueError("e_inf is not strictly below the windowed energies")
    lx = np.log(np.array([s.residual for s in usable]))
    ly = np.log(gaps)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    theta = 1.0 - 1.0 / slope if slope > 1.0 else float("nan")
    return LojaFit(
        theta_hat=float(theta),
        slope=float(slope),
        r_squared=float(r2),
        window=(usable[0].time, usable[-1].time),
    )


def dense_segment(curve: DiscreteCurve, params: ElasticParams, dt: float,
                  n_steps: int) -> list[FlowState]:
    """March n_steps consecutive RK4 steps at a fixed dt, no resampling.

    Produces the constant-dt state sequences evolution_consistency needs;
    the energy-monotonicity retry of the production stepper is bypassed on
    purpose so that dt stays exactly constant.
    """
    states = [make_state(curve, params)]
    for _ in range(n_steps):
        prev = states[-1]
        nxt = DiscreteCurve(prev.curve.ambient, _rk4_update(prev.curve, params, dt).points)
        states.append(make_state(nxt, params, prev.time + dt, dt))
    return states


def evolution_consistency(states: Sequence[FlowState], params: ElasticParams) -> float:
    """Relative L^2(ds) defect of the curvature evolution identity.

    Compares the centered time difference of the curvature field (normal
    projected onto the middle curve) against nabla^2 V + <V,k> k +
    R(V,tau) tau with V the flow velocity of the middle state.  Needs at
    least 3 consecutive samples at one constant dt with no resampling
    inside the segment.
    """
    if len(states) < 3:
        raise InvalidSegmentError("need at least 3 consecutive states")
    mid = len(states) // 2
    prev, cur, nxt = states[mid - 1], states[mid], states[mid + 1]
    dt1 = cur.time - prev.time
    dt2 = nxt.time - cur.time
    if abs(dt1 - dt2) > 1e-12 * max(dt1, dt2):
        raise InvalidSegmentError("segment dt is not constant")
    if prev.curve.n != cur.curve.n or nxt.curve.n != cur.curve.n:
        raise InvalidSegmentError("node count changed inside the segment")

    amb = cur.curve.ambient
    k_prev = curvature(prev.curve).values
    k_next = curvature(nxt.curve).values
    lhs = project_normal(cur.curve, (k_next - k_prev) / (dt1 + dt2)).values

    vel = Field(cur.curve, -gradient_field(cur.curve, params).values,
                is_ambient_tangent=True, is_curve_normal=True)
    k_mid = curvature(cur.curve).values
    tau = unit_tangent(cur.curve).values
    rhs = (
        nabla(cur.curve, vel, 2).values
        + amb.inner(vel.values, k_mid)[:, None] * k_mid
        + amb.riemann_apply(cur.curve.points, vel.values, tau, tau)
    )
    _, ds, _ = node_speeds(cur.curve)
    num = float(np.sqrt(np.sum(amb.inner(lhs - rhs, lhs - rhs) * ds)))
    den = float(np.sqrt(np.sum(amb.inner(rhs, rhs) * ds)))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


class InterpolationProbe(NamedTuple):
    ratio: float
    degenerate: bool


def interpolation_probe(curve: DiscreteCurve, i: int, n: int, q: float) -> InterpolationProbe:
    """Quotient ||nabla^i k||_q / (||k||_2^{1-a} ||k||_{n,2}^a).

    a = (i + 1/2 - 1/q)/n; all norms are the scale-invariant ones.  On a
    geodesic the quotient is 0/0; the probe then returns 0 with the
    degenerate marker set.
    """
    if not (0 <= i < n):
        raise ValueError("need 0 <= i < n")
    if q < 2:
        raise ValueError("q must be >= 2")
    base = scale_invariant_norm(curve, 0, 2.0)
    if base < 1e-12:
        return InterpolationProbe(0.0, True)
    alpha = (i + 0.5 - 1.0 / q) / n
    from .curve import sum_norm

    denom = base ** (1.0 - alpha) * sum_norm(curve, n, 2.0) ** alpha
    return InterpolationProbe(scale_invariant_norm(curve, i, q) / denom, False)


def norm_report(curve: DiscreteCurve, n_max: int, q_list: Sequence[float]) -> list[dict]:
    """Rows {j, q, norm} of scale-invariant norms for j = 0..n_max."""
    rows = []
    for j in range(n_max + 1):
        for q in q_list:
            rows.append({"j": j, "q": float(q), "norm": scale_invariant_norm(curve, j, q)})
    return rows
