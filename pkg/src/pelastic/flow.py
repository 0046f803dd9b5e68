"""Time integration of the gradient flow with stability-controlled stepping.

The velocity is minus the strong-form gradient; steps are classical RK4
updates of the point array with retraction after every stage, a stiffness
bound dt ~ h^4, an energy-monotonicity retry loop, and periodic
constant-speed resampling.  Convergence is declared on the residual norm,
escape on a configurable coordinate bound, and every run is deterministic
for identical inputs.

run() dispatches to a fused numba kernel for the built-in ambients (see
_kernel.py) and falls back to the pure-numpy stepper otherwise; both
paths implement the same scheme.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curve import DiscreteCurve, node_speeds, curvature, reparametrize_uniform
from .energy import ElasticParams, energy, gradient_field, residual
from .errors import (
    DegenerateCurveError,
    DomainExitError,
    RetractionError,
    StepFailureError,
    VanishingCurvatureError,
)

DT_FLOOR = 1e-12
MAX_HALVINGS = 20


@dataclass(frozen=True)
class FlowConfig:
    """Stepping, termination and sampling controls."""

    t_max: float
    dt_safety: float = 0.4
    reparam_every: int = 10
    tol_residual: float = 1e-4
    escape_coordinate: Optional[int] = None
    escape_bound: Optional[float] = None
    mono_tol: float = 1e-10
    sample_every: int = 100

    def __post_init__(self):
        if not (0.0 < self.dt_safety <= 1.0):
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.t_max <= 0 or self.tol_residual <= 0 or self.mono_tol <= 0:
            raise ValueError("t_max, tol_residual and mono_tol must be positive")
        if self.reparam_every <= 0 or self.sample_every <= 0:
            raise ValueError("reparam_every and sample_every must be positive")
        if (self.escape_coordinate is None) != (self.escape_bound is None):
            raise ValueError("escape predicate needs both a coordinate and a bound")


@dataclass(frozen=True)
class FlowState:
    """One time slice of the flow: curve plus its recomputable scalars."""

    time: float
    curve: DiscreteCurve
    energy: float
    residual: float
    dt_used: float


class Outcome(enum.Enum):
    CONVERGED = "Converged"
    ESCAPED = "Escaped"
    MAX_TIME = "MaxTimeReached"
    STEP_FAILURE = "StepFailure"


@dataclass(frozen=True)
class FlowTrajectory:
    samples: tuple
    outcome: Outcome
    message: str = ""

    @property
    def final(self) -> FlowState:
        return self.samples[-1]


def make_state(curve: DiscreteCurve, params: ElasticParams, time: float = 0.0,
               dt_used: float = 0.0) -> FlowState:
    return FlowState(time, curve, energy(curve, params), residual(curve, params), dt_used)


def stable_dt(state: FlowState, params: ElasticParams, config: FlowConfig) -> float:
    """Stiffness-bounded step: dt_safety * h^4 / (1 + max|k|^{p-2}), h = min ds."""
    _, ds, _ = node_speeds(state.curve)
    kn = state.curve.ambient.norm(curvature(state.curve).values)
    kmax = float(kn.max())
    dt = _dt_formula(float(ds.min()), kmax, params.p, config.dt_safety)
    if dt < DT_FLOOR:
        raise StepFailureError(f"stable dt underflow ({dt:.3e})")
    return dt


def _dt_formula(h: float, kmax: float, p: float, dt_safety: float) -> float:
    stiff = kmax ** (p - 2.0) if kmax > 0.0 else 0.0
    return dt_safety * h**4 / (1.0 + stiff)


def _rk4_update(curve: DiscreteCurve, params: ElasticParams, dt: float) -> DiscreteCurve:
    amb = curve.ambient

    def vel(c: DiscreteCurve) -> np.ndarray:
        return -gradient_field(c, params).values

    p0 = curve.points
    k1 = vel(curve)
    y = DiscreteCurve(amb, amb.retract(p0 + 0.5 * dt * k1), validate=False)
    k2 = vel(y)
    y = DiscreteCurve(amb, amb.retract(p0 + 0.5 * dt * k2), validate=False)
    k3 = vel(y)
    y = DiscreteCurve(amb, amb.retract(p0 + dt * k3), validate=False)
    k4 = vel(y)
    new = amb.retract(p0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return DiscreteCurve(amb, new, validate=False)


def step(state: FlowState, params: ElasticParams, config: FlowConfig,
         reparametrize: bool = False) -> FlowState:
    """One accepted flow step; halves dt on energy increase (<= 20 times).

    The caller decides when the periodic resampling applies (run() does it
    every config.reparam_every steps); resampling resets the monotonicity
    baseline since it changes the discrete quadrature, not the geometry.
    """
    dt = stable_dt(state, params, config)
    e_old = state.energy
    for _ in range(MAX_HALVINGS + 1):
        candidate = _rk4_update(state.curve, params, dt)
        e_new = energy(candidate, params)
        if e_new <= e_old + config.mono_tol:
            break
        dt *= 0.5
    else:
        raise StepFailureError(
            f"energy kept increasing after {MAX_HALVINGS} dt halvings"
        )
    new_curve = DiscreteCurve(candidate.ambient, candidate.points)
    if reparametrize:
        new_curve = reparametrize_uniform(new_curve)
    return make_state(new_curve, params, state.time + dt, dt)


_KERNEL_ERRORS = {
    1: (RetractionError, "retraction failed during stepping"),
    2: (DomainExitError, "flow left the revolution profile domain"),
    3: (VanishingCurvatureError, "curvature floor activated (p > 2)"),
    4: (DegenerateCurveError, "curve degenerated during stepping"),
    5: (StepFailureError, "stable dt underflow"),
    6: (StepFailureError, "energy kept increasing after 20 dt halvings"),
}


def _escape_direction(curve: DiscreteCurve, config: FlowConfig) -> int:
    mean0 = float(curve.points[:, config.escape_coordinate].mean())
    return 1 if config.escape_bound >= mean0 else -1


def _escaped(curve: DiscreteCurve, config: FlowConfig, direction: int) -> bool:
    mean_c = float(curve.points[:, config.escape_coordinate].mean())
    return mean_c >= config.escape_bound if direction > 0 else mean_c <= config.escape_bound


def run(initial: DiscreteCurve, params: ElasticParams, config: FlowConfig) -> FlowTrajectory:
    """Iterate steps until convergence, escape, the horizon, or failure."""
    if initial.ambient.kernel_id() is not None:
        return _run_kernel(initial, params, config)
    return _run_python(initial, params, config)


def _run_python(initial: DiscreteCurve, params: ElasticParams, config: FlowConfig) -> FlowTrajectory:
    esc_dir = (
        _escape_direction(initial, config)
        if config.escape_coordinate is not None
        else 0
    )
    state = make_state(initial, params)
    samples = [state]
    step_idx = 0
    message = ""
    while True:
        if state.residual < config.tol_residual:
            outcome = Outcome.CONVERGED
            break
        if esc_dir and _escaped(state.curve, config, esc_dir):
            outcome = Outcome.ESCAPED
            break
        if state.time >= config.t_max:
            outcome = Outcome.MAX_TIME
            break
        try:
            state = step(
                state, params, config,
                reparametrize=((step_idx + 1) % config.reparam_every == 0),
            )
        except (StepFailureError, RetractionError, DomainExitError,
                VanishingCurvatureError, DegenerateCurveError) as exc:
            outcome = Outcome.STEP_FAILURE
            message = str(exc)
            break
        step_idx += 1
        if step_idx % config.sample_every == 0:
            samples.append(state)
    if samples[-1] is not state:
        samples.append(state)
    return FlowTrajectory(tuple(samples), outcome, message)


def _run_kernel(initial: DiscreteCurve, params: ElasticParams, config: FlowConfig) -> FlowTrajectory:
    from . import _kernel

    kind, pmode, pa, tmin = initial.ambient.kernel_id()
    esc_on = 1 if config.escape_coordinate is not None else 0
    esc_coord = config.escape_coordinate if esc_on else 0
    esc_bound = config.escape_bound if esc_on else 0.0
    esc_dir = _escape_direction(initial, config) if esc_on else 1

    n, d = initial.points.shape
    cap = 4096
    buf = {
        "samp_step": np.empty(cap, dtype=np.int64),
        "samp_time": np.empty(cap),
        "samp_energy": np.empty(cap),
        "samp_res": np.empty(cap),
        "samp_dt": np.empty(cap),
        "samp_length": np.empty(cap),
        "samp_kmax": np.empty(cap),
        "samp_kmin": np.empty(cap),
        "samp_pts": np.empty((cap, n, d)),
    }

    planar = kind == 0 and d == 2
    pts = initial.points.copy()
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    t, step_idx, last_dt = 0.0, 0, 0.0
    raw_samples: dict[int, tuple] = {}
    while True:
        common = (
            config.dt_safety, config.t_max, config.reparam_every,
            config.tol_residual, esc_on, esc_coord, esc_bound, esc_dir,
            config.mono_tol, config.sample_every,
            buf["samp_step"], buf["samp_time"], buf["samp_energy"],
            buf["samp_res"], buf["samp_dt"], buf["samp_length"],
            buf["samp_kmax"], buf["samp_kmin"], buf["samp_pts"],
        )
        if planar:
            status, err, step_idx, t, last_dt, ns = _kernel.run_chunk_r2(
                px, py, t, step_idx, last_dt, params.p, params.lam, *common
            )
        else:
            status, err, step_idx, t, last_dt, ns = _kernel.run_chunk(
                pts, t, step_idx, last_dt,
                kind, pmode, pa, tmin, params.p, params.lam, *common
            )
        for i in range(ns):
            s_idx = int(buf["samp_step"][i])
            raw_samples[s_idx] = (
                float(buf["samp_time"][i]),
                buf["samp_pts"][i].copy(),
                float(buf["samp_dt"][i]),
            )
        if status != _kernel.CONTINUE:
            break
    if planar:
        pts = np.stack([px, py], axis=-1)

    message = ""
    if status == _kernel.FAILURE:
        outcome = Outcome.STEP_FAILURE
        exc_type, message = _KERNEL_ERRORS.get(err, (StepFailureError, "kernel failure"))
        message = f"{message} (step {step_idx})"
        if not raw_samples:
            # failed before producing any valid state: treat as a
            # precondition violation and surface the typed error
            raise exc_type(message)
    else:
        outcome = {
            _kernel.CONVERGED: Outcome.CONVERGED,
            _kernel.ESCAPED: Outcome.ESCAPED,
            _kernel.MAX_TIME: Outcome.MAX_TIME,
        }[status]
        raw_samples[step_idx] = (t, pts.copy(), last_dt)

    # Rebuild states with the numpy operators so that stored energies and
    # residuals are exactly recomputable through the public API.
    samples = []
    for s_idx in sorted(raw_samples):
        s_time, s_pts, s_dt = raw_samples[s_idx]
        curve = DiscreteCurve(initial.ambient, s_pts)
        samples.append(make_state(curve, params, s_time, s_dt))
    return FlowTrajectory(tuple(samples), outcome, message)
