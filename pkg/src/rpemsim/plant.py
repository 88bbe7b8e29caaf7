"""Continuous-time IPMSM electrical model, torque, mechanics and measurement.

The electrical part in rotor coordinates, per-unit:

    di_d/dt = (omega_n/x_d) * (u_d - r_s*i_d + n*x_q*i_q)
    di_q/dt = (omega_n/x_q) * (u_q - r_s*i_q - n*x_d*i_d - n*psi_m)

For fixed (n, u) this is linear in i, so the trapezoidal step is an exact
2x2 solve per step with no iteration, which keeps runs bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Optional

import numpy as np

from .pu import ConfigError, DqVector, MachineParams

IntegrationMethod = Literal["explicit_euler", "trapezoidal"]

_EVENT_TARGETS = ("psi_m", "r_s", "x_d", "x_q", "load_torque", "speed_ref")


@dataclass
class PlantState:
    """True machine state: stator current, speed, angle, live parameters."""

    i: DqVector
    n: float
    theta: float
    params: MachineParams

    def __post_init__(self) -> None:
        self.theta = self.theta % (2.0 * math.pi)


@dataclass(frozen=True)
class MechanicalParams:
    inertia_H: float = 0.5  # per-unit inertia constant, seconds
    load_torque: float = 0.0
    speed_mode: Literal["dynamic", "prescribed"] = "prescribed"

    def __post_init__(self) -> None:
        if self.speed_mode == "dynamic" and self.inertia_H <= 0.0:
            raise ConfigError("dynamic speed mode needs inertia_H > 0")


@dataclass(frozen=True)
class StepEvent:
    """Scheduled step change of a true plant quantity; the estimator is
    never informed."""

    time_s: float
    target: str
    factor: Optional[float] = None
    value: Optional[float] = None

    def __post_init__(self) -> None:
        if self.time_s < 0.0:
            raise ConfigError("event time must be >= 0")
        if self.target not in _EVENT_TARGETS:
            raise ConfigError(f"unknown event target {self.target!r}")
        if (self.factor is None) == (self.value is None):
            raise ConfigError("event needs exactly one of factor / value")


def electrical_derivative(state: PlantState, u: DqVector, omega_n: float) -> DqVector:
    """di/dt of the electrical model, per second."""
    p = state.params
    i_d, i_q = state.i
    n = state.n
    return DqVector(
        d=(omega_n / p.x_d) * (u.d - p.r_s * i_d + n * p.x_q * i_q),
        q=(omega_n / p.x_q) * (u.q - p.r_s * i_q - n * p.x_d * i_d - n * p.psi_m),
    )


def torque(state: PlantState) -> float:
    """Electromagnetic torque: magnet plus reluctance term."""
    p = state.params
    return p.psi_m * state.i.q + (p.x_d - p.x_q) * state.i.d * state.i.q


def mechanical_step(
    n: float, tau_e: float, tau_l: float, mech: MechanicalParams, dt: float,
    prescribed_n: Optional[float] = None,
) -> float:
    """Advance per-unit speed one step.

    In prescribed mode the scenario schedule wins regardless of torques.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if mech.speed_mode == "prescribed":
        return prescribed_n if prescribed_n is not None else n
    return n + dt * (tau_e - tau_l) / (2.0 * mech.inertia_H)


def step_matrices(
    params: MachineParams, n: float, omega_n: float, dt: float
) -> tuple[float, float, float, float, float, float, float, float]:
    """Trapezoidal update matrices for the linear current dynamics.

    Returns (m11, m12, m21, m22) of inv(I - dt/2*A) and (n11, n12, n21, n22)
    of (I + dt/2*A), with A the state matrix at fixed n.
    """
    a11 = -params.r_s * omega_n / params.x_d
    a12 = n * omega_n * params.x_q / params.x_d
    a21 = -n * omega_n * params.x_d / params.x_q
    a22 = -params.r_s * omega_n / params.x_q
    h = 0.5 * dt
    # I - h*A
    m11 = 1.0 - h * a11
    m12 = -h * a12
    m21 = -h * a21
    m22 = 1.0 - h * a22
    det = m11 * m22 - m12 * m21
    # det = (1+h*r*w/xd)(1+h*r*w/xq) + (h*n*w)^2 > 0 for dt>0, r_s>=0, x>0
    assert det > 0.0, "trapezoidal step matrix must be non-singular"
    inv = 1.0 / det
    return (
        m22 * inv,
        -m12 * inv,
        -m21 * inv,
        m11 * inv,
        1.0 + h * a11,
        h * a12,
        h * a21,
        1.0 + h * a22,
    )


def integrate_electrical(
    state: PlantState,
    u: DqVector,
    dt: float,
    method: IntegrationMethod = "trapezoidal",
    omega_n: float = 2.0 * math.pi * 50.0,
) -> PlantState:
    """Advance the stator current one fixed step; n, theta, params untouched."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if method == "explicit_euler":
        dd = electrical_derivative(state, u, omega_n)
        i_new = DqVector(state.i.d + dt * dd.d, state.i.q + dt * dd.q)
        return PlantState(i=i_new, n=state.n, theta=state.theta, params=state.params)
    if method != "trapezoidal":
        raise ValueError(f"unknown integration method {method!r}")
    p = state.params
    mi11, mi12, mi21, mi22, n11, n12, n21, n22 = step_matrices(p, state.n, omega_n, dt)
    b_d = omega_n / p.x_d * u.d
    b_q = omega_n / p.x_q * (u.q - state.n * p.psi_m)
    i_d, i_q = state.i
    rhs_d = n11 * i_d + n12 * i_q + dt * b_d
    rhs_q = n21 * i_d + n22 * i_q + dt * b_q
    i_new = DqVector(mi11 * rhs_d + mi12 * rhs_q, mi21 * rhs_d + mi22 * rhs_q)
    return PlantState(i=i_new, n=state.n, theta=state.theta, params=state.params)


def steady_state_current(
    params: MachineParams, u: DqVector, n: float
) -> DqVector:
    """Solve the electrical model with derivatives zeroed.

    r_s*i_d - n*x_q*i_q = u_d
    n*x_d*i_d + r_s*i_q = u_q - n*psi_m
    """
    a = params.r_s
    b = -n * params.x_q
    c = n * params.x_d
    d = params.r_s
    det = a * d - b * c
    if abs(det) < 1e-15:
        raise ValueError("steady state undefined: r_s = 0 at standstill")
    rhs_d = u.d
    rhs_q = u.q - n * params.psi_m
    return DqVector(
        d=(d * rhs_d - b * rhs_q) / det,
        q=(-c * rhs_d + a * rhs_q) / det,
    )


def steady_state_voltage(
    params: MachineParams, i: DqVector, n: float
) -> DqVector:
    """Voltage required to hold current i at speed n in steady state."""
    return DqVector(
        d=params.r_s * i.d - n * params.x_q * i.q,
        q=params.r_s * i.q + n * (params.x_d * i.d + params.psi_m),
    )


def measure(
    state: PlantState, noise_sigma: float, rng: np.random.Generator
) -> DqVector:
    """Measured stator current: true value plus iid Gaussian noise per axis."""
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be >= 0")
    if noise_sigma == 0.0:
        return state.i
    w = rng.standard_normal(2)
    return DqVector(state.i.d + noise_sigma * w[0], state.i.q + noise_sigma * w[1])


def apply_param_event(params: MachineParams, event: StepEvent) -> MachineParams:
    """Apply one parameter step event; raises ConfigError if the result is
    invalid."""
    if event.target not in ("psi_m", "r_s", "x_d", "x_q"):
        raise ValueError(f"{event.target!r} is not a machine parameter target")
    current = getattr(params, event.target)
    new = current * event.factor if event.factor is not None else event.value
    return replace(params, **{event.target: new})


def apply_step_events(
    state: PlantState, events: Iterable[StepEvent], t: float
) -> PlantState:
    """Apply every pending parameter event with time <= t, in order.

    The caller is expected to pass only not-yet-applied events; scenario
    level targets (load_torque, speed_ref) are dispatched by the runner.
    """
    params = state.params
    for ev in events:
        if ev.time_s <= t and ev.target in ("psi_m", "r_s", "x_d", "x_q"):
            params = apply_param_event(params, ev)
    if params is state.params:
        return state
    return replace(state, params=params)


def validate_events(events: list[StepEvent], params0: MachineParams) -> None:
    """Reject event lists that would ever produce invalid parameters."""
    times = [ev.time_s for ev in events]
    if times != sorted(times):
        raise ConfigError("events must be sorted by time")
    params = params0
    for ev in events:
        if ev.target in ("psi_m", "r_s", "x_d", "x_q"):
            try:
                params = apply_param_event(params, ev)
            except ConfigError as exc:
                raise ConfigError(
                    f"event at t={ev.time_s}s produces invalid parameters: {exc}"
                ) from exc
