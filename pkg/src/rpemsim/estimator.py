"""Recursive prediction-error estimator for magnet flux and stator
resistance.

An open-loop full-order predictor integrates the machine model with the
estimated parameters from the measured voltage and speed; no current
feedback enters it, so the prediction error carries parametric error
information only. Parameter updates are

    theta[k] = project( theta[k-1] + L[k] * eps[k] )

with the gain L computed from the prediction gradient (the sensitivity of
the predicted current to each estimated parameter) by one of three
algorithms:

  SGA     normalized gradient step, scalar filtered Hessian
  GNA     Gauss-Newton step, 2x2 filtered Hessian with pseudoinverse
          fallback where the Hessian is singular (standstill)
  PhyInt  fixed gains solving the steady-state error relations directly

A speed scheduler zeroes the flux row at low speed and the resistance row
away from standstill, decoupling the two estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional

from .plant import step_matrices, steady_state_current
from .pu import ConfigError, DqVector, MachineParams


class ParameterVector(NamedTuple):
    """Estimated parameters: magnet flux linkage and stator resistance."""

    psi_m: float
    r_s: float


@dataclass(frozen=True)
class ParameterBox:
    """Admissible parameter region; estimates are clamped into it after
    every update."""

    psi_m_min: float
    psi_m_max: float
    r_s_min: float
    r_s_max: float

    def __post_init__(self) -> None:
        if not (self.psi_m_min < self.psi_m_max and self.r_s_min < self.r_s_max):
            raise ConfigError("parameter box must be nonempty (min < max per axis)")

    @classmethod
    def around(cls, nominal: ParameterVector, fraction: float = 0.3) -> "ParameterBox":
        return cls(
            psi_m_min=nominal.psi_m * (1.0 - fraction),
            psi_m_max=nominal.psi_m * (1.0 + fraction),
            r_s_min=nominal.r_s * (1.0 - fraction),
            r_s_max=nominal.r_s * (1.0 + fraction),
        )


def project_parameters(theta: ParameterVector, box: ParameterBox) -> ParameterVector:
    """Componentwise clamp into the admissible box."""
    return ParameterVector(
        psi_m=min(max(theta.psi_m, box.psi_m_min), box.psi_m_max),
        r_s=min(max(theta.r_s, box.r_s_min), box.r_s_max),
    )


class GradientSet(NamedTuple):
    """Prediction gradient entries d(i_hat)/d(theta).

    psi_d = d i_hat_d / d psi_m_hat, rs_q = d i_hat_q / d r_s_hat, etc.
    """

    psi_d: float
    psi_q: float
    rs_d: float
    rs_q: float


class GainMatrix(NamedTuple):
    """2x2 estimation gain; row 1 feeds the flux estimate, row 2 the
    resistance estimate, columns are the d/q prediction error axes."""

    l11: float
    l12: float
    l21: float
    l22: float


@dataclass
class PredictorState:
    """Predicted current plus dynamic prediction-gradient states."""

    i_hat: DqVector
    grad_psi: DqVector = field(default_factory=lambda: DqVector(0.0, 0.0))
    grad_rs: DqVector = field(default_factory=lambda: DqVector(0.0, 0.0))


@dataclass
class HessianState:
    """Second-order information built from the prediction gradients.

    scalar_r serves the SGA trace mode, the per-gradient fields its
    per-gradient variant, and (r11, r12, r22) the symmetric GNA matrix.
    mpp_last records whether the last GNA step took the pseudoinverse
    branch.
    """

    scalar_r: float = 1.0
    rg_psi_d: float = 0.0
    rg_psi_q: float = 0.0
    rg_rs_d: float = 0.0
    rg_rs_q: float = 0.0
    r11: float = 0.0
    r12: float = 0.0
    r22: float = 0.0
    mpp_last: bool = False

    def det(self) -> float:
        return self.r11 * self.r22 - self.r12 * self.r12


Algorithm = Literal["sga", "gna", "phyint"]
GradientMode = Literal["steady_state", "dynamic"]


@dataclass(frozen=True)
class GainConfig:
    """Gain algorithm selection, adaptation rates, scheduler and floors.

    gamma values are per-step weights gamma0 = T_samp / T0; the flux and
    resistance rows carry separate gain-rate values so one configuration
    covers both estimation tasks.
    """

    algorithm: Algorithm = "sga"
    gamma_L_psi: float = 3.25e-4
    gamma_L_rs: float = 6.25e-5
    gamma_r: float = 6.25e-4
    gradient_mode_psi: GradientMode = "steady_state"
    gradient_mode_rs: GradientMode = "steady_state"
    n_lim1: float = 0.1
    n_lim2: float = 0.01
    r_floor: float = 1e-6
    detR_floor: float = 1e-10
    i_floor: float = 0.02
    ss_denom_floor: float = 1e-9
    mpp_tol: float = 1e-9
    gain_cap: float = 1e4
    sga_r_mode: Literal["trace", "per_gradient"] = "trace"
    r0: Optional[float] = None

    def __post_init__(self) -> None:
        for g in (self.gamma_L_psi, self.gamma_L_rs, self.gamma_r):
            if not (0.0 < g <= 1.0):
                raise ConfigError("gamma values must lie in (0, 1]")
        if abs(self.n_lim1) < abs(self.n_lim2):
            raise ConfigError("scheduler needs |n_lim1| >= |n_lim2|")
        if self.algorithm not in ("sga", "gna", "phyint"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.gain_cap <= 0.0:
            raise ConfigError("gain_cap must be positive")


def gamma_from_T0(t_samp: float, t0: float) -> float:
    """Per-step gain from the integral time constant: gamma0 = T_samp/T0."""
    if t_samp <= 0.0:
        raise ConfigError("T_samp must be positive")
    if t0 < t_samp:
        raise ConfigError("T0 must be >= T_samp")
    return t_samp / t0


def prediction_error(i_meas: DqVector, i_hat: DqVector) -> DqVector:
    """Measured minus predicted stator current."""
    return DqVector(i_meas.d - i_hat.d, i_meas.q - i_hat.q)


def _model_params(theta: ParameterVector, x_d: float, x_q: float) -> MachineParams:
    return MachineParams(x_d=x_d, x_q=x_q, r_s=theta.r_s, psi_m=theta.psi_m)


def predictor_step(
    state: PredictorState,
    u: DqVector,
    n: float,
    theta_hat: ParameterVector,
    known_x: tuple[float, float],
    omega_n: float,
    dt: float,
) -> PredictorState:
    """Advance the predicted current one trapezoidal step (open loop).

    Inputs are the measured voltage and speed; gradient states are copied
    untouched, see :func:`gradient_dynamic_step`.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x_d, x_q = known_x
    model = _model_params(theta_hat, x_d, x_q)
    mi11, mi12, mi21, mi22, n11, n12, n21, n22 = step_matrices(model, n, omega_n, dt)
    b_d = omega_n / x_d * u.d
    b_q = omega_n / x_q * (u.q - n * theta_hat.psi_m)
    i_d, i_q = state.i_hat
    rhs_d = n11 * i_d + n12 * i_q + dt * b_d
    rhs_q = n21 * i_d + n22 * i_q + dt * b_q
    return PredictorState(
        i_hat=DqVector(mi11 * rhs_d + mi12 * rhs_q, mi21 * rhs_d + mi22 * rhs_q),
        grad_psi=state.grad_psi,
        grad_rs=state.grad_rs,
    )


def gradient_dynamic_step(
    state: PredictorState,
    n: float,
    theta_hat: ParameterVector,
    known_x: tuple[float, float],
    omega_n: float,
    dt: float,
    i_hat_prev: Optional[DqVector] = None,
) -> PredictorState:
    """Advance the dynamic prediction-gradient states one trapezoidal step.

    The gradient dynamics share the predictor's state matrix; the flux
    gradient is forced by -n in the q row, the resistance gradient by the
    negative predicted current. When ``i_hat_prev`` is given the resistance
    forcing is averaged over both interval ends, which makes the recursion
    the exact parameter-derivative of the discrete predictor step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x_d, x_q = known_x
    model = _model_params(theta_hat, x_d, x_q)
    mi11, mi12, mi21, mi22, n11, n12, n21, n22 = step_matrices(model, n, omega_n, dt)

    g = state.grad_psi
    b_q = -omega_n * n / x_q
    rhs_d = n11 * g.d + n12 * g.q
    rhs_q = n21 * g.d + n22 * g.q + dt * b_q
    grad_psi = DqVector(mi11 * rhs_d + mi12 * rhs_q, mi21 * rhs_d + mi22 * rhs_q)

    i_new = state.i_hat
    i_old = i_hat_prev if i_hat_prev is not None else i_new
    f_d = -0.5 * omega_n * (i_old.d + i_new.d) / x_d
    f_q = -0.5 * omega_n * (i_old.q + i_new.q) / x_q
    g = state.grad_rs
    rhs_d = n11 * g.d + n12 * g.q + dt * f_d
    rhs_q = n21 * g.d + n22 * g.q + dt * f_q
    grad_rs = DqVector(mi11 * rhs_d + mi12 * rhs_q, mi21 * rhs_d + mi22 * rhs_q)

    return PredictorState(i_hat=state.i_hat, grad_psi=grad_psi, grad_rs=grad_rs)


def _advance_all(
    state: PredictorState,
    u: DqVector,
    n: float,
    theta_hat: ParameterVector,
    known_x: tuple[float, float],
    omega_n: float,
    dt: float,
) -> PredictorState:
    """Predictor and both gradient pairs in one pass, sharing the factored
    step matrices; numerically identical to predictor_step followed by
    gradient_dynamic_step with endpoint forcing."""
    x_d, x_q = known_x
    model = _model_params(theta_hat, x_d, x_q)
    mi11, mi12, mi21, mi22, n11, n12, n21, n22 = step_matrices(model, n, omega_n, dt)

    i_d, i_q = state.i_hat
    b_d = omega_n / x_d * u.d
    b_q = omega_n / x_q * (u.q - n * theta_hat.psi_m)
    rhs_d = n11 * i_d + n12 * i_q + dt * b_d
    rhs_q = n21 * i_d + n22 * i_q + dt * b_q
    ih_d = mi11 * rhs_d + mi12 * rhs_q
    ih_q = mi21 * rhs_d + mi22 * rhs_q

    g_d, g_q = state.grad_psi
    bq = -omega_n * n / x_q
    rhs_d = n11 * g_d + n12 * g_q
    rhs_q = n21 * g_d + n22 * g_q + dt * bq
    gp_d = mi11 * rhs_d + mi12 * rhs_q
    gp_q = mi21 * rhs_d + mi22 * rhs_q

    g_d, g_q = state.grad_rs
    f_d = -0.5 * omega_n * (i_d + ih_d) / x_d
    f_q = -0.5 * omega_n * (i_q + ih_q) / x_q
    rhs_d = n11 * g_d + n12 * g_q + dt * f_d
    rhs_q = n21 * g_d + n22 * g_q + dt * f_q
    gr_d = mi11 * rhs_d + mi12 * rhs_q
    gr_q = mi21 * rhs_d + mi22 * rhs_q

    return PredictorState(
        i_hat=DqVector(ih_d, ih_q),
        grad_psi=DqVector(gp_d, gp_q),
        grad_rs=DqVector(gr_d, gr_q),
    )


def gradient_steady_state(
    theta_hat: ParameterVector,
    known_x: tuple[float, float],
    n: float,
    i_hat: DqVector,
    denom_floor: float = 1e-9,
) -> GradientSet:
    """Closed-form steady-state prediction gradients.

    Common denominator D = r_s^2 + n^2 * x_d * x_q (squared-resistance
    form, consistent with the settled dynamic gradients). Below the floor
    the gradients are suppressed to zero so downstream gains vanish.
    """
    x_d, x_q = known_x
    r = theta_hat.r_s
    D = r * r + n * n * x_d * x_q
    if D < denom_floor:
        return GradientSet(0.0, 0.0, 0.0, 0.0)
    return GradientSet(
        psi_d=-n * n * x_q / D,
        psi_q=-n * r / D,
        rs_d=(-r * i_hat.d - n * x_q * i_hat.q) / D,
        rs_q=(-r * i_hat.q + n * x_d * i_hat.d) / D,
    )


def predictor_steady_state(
    theta_hat: ParameterVector,
    known_x: tuple[float, float],
    n: float,
    u: DqVector,
) -> DqVector:
    """Fixed point of the predictor at constant voltage and speed."""
    model = _model_params(theta_hat, known_x[0], known_x[1])
    return steady_state_current(model, u, n)


def gain_schedule(L: GainMatrix, n: float, cfg: GainConfig) -> GainMatrix:
    """Zero the flux row below |n_lim1| and the resistance row above
    |n_lim2| so each parameter adapts only where it is observable."""
    l11, l12 = (L.l11, L.l12) if abs(n) > abs(cfg.n_lim1) else (0.0, 0.0)
    l21, l22 = (L.l21, L.l22) if abs(n) < abs(cfg.n_lim2) else (0.0, 0.0)
    return GainMatrix(l11, l12, l21, l22)


def _cap_gain(L: GainMatrix, cap: float) -> GainMatrix:
    """Bound each gain row's magnitude; large gains amplify noise."""
    l11, l12, l21, l22 = L
    n1 = math.hypot(l11, l12)
    if n1 > cap:
        k = cap / n1
        l11, l12 = l11 * k, l12 * k
    n2 = math.hypot(l21, l22)
    if n2 > cap:
        k = cap / n2
        l21, l22 = l21 * k, l22 * k
    return GainMatrix(l11, l12, l21, l22)


def _apply_update(
    theta: ParameterVector, L: GainMatrix, eps: DqVector, box: ParameterBox
) -> ParameterVector:
    return project_parameters(
        ParameterVector(
            psi_m=theta.psi_m + L.l11 * eps.d + L.l12 * eps.q,
            r_s=theta.r_s + L.l21 * eps.d + L.l22 * eps.q,
        ),
        box,
    )


def sga_update(
    theta: ParameterVector,
    eps: DqVector,
    grads: GradientSet,
    hess: HessianState,
    cfg: GainConfig,
    box: ParameterBox,
    schedule_n: Optional[float] = None,
) -> tuple[ParameterVector, HessianState, GainMatrix]:
    """Stochastic-gradient update.

    Trace mode filters the full gradient trace into one scalar r and uses
    L = (gamma_L / r) * gradient. Per-gradient mode normalizes each gain
    element by a filter of its own squared gradient entry, which makes the
    settled gains coincide with the PhyInt relations.
    """
    g = cfg.gamma_r
    if cfg.sga_r_mode == "trace":
        tr = grads.psi_d**2 + grads.psi_q**2 + grads.rs_d**2 + grads.rs_q**2
        r = hess.scalar_r + g * (tr - hess.scalar_r)
        hess_new = HessianState(
            scalar_r=r,
            rg_psi_d=hess.rg_psi_d,
            rg_psi_q=hess.rg_psi_q,
            rg_rs_d=hess.rg_rs_d,
            rg_rs_q=hess.rg_rs_q,
            r11=hess.r11,
            r12=hess.r12,
            r22=hess.r22,
        )
        rdiv = max(r, cfg.r_floor)
        L = GainMatrix(
            l11=cfg.gamma_L_psi * grads.psi_d / rdiv,
            l12=cfg.gamma_L_psi * grads.psi_q / rdiv,
            l21=cfg.gamma_L_rs * grads.rs_d / rdiv,
            l22=cfg.gamma_L_rs * grads.rs_q / rdiv,
        )
    else:
        rpd = hess.rg_psi_d + g * (grads.psi_d**2 - hess.rg_psi_d)
        rpq = hess.rg_psi_q + g * (grads.psi_q**2 - hess.rg_psi_q)
        rrd = hess.rg_rs_d + g * (grads.rs_d**2 - hess.rg_rs_d)
        rrq = hess.rg_rs_q + g * (grads.rs_q**2 - hess.rg_rs_q)
        hess_new = HessianState(
            scalar_r=hess.scalar_r,
            rg_psi_d=rpd,
            rg_psi_q=rpq,
            rg_rs_d=rrd,
            rg_rs_q=rrq,
            r11=hess.r11,
            r12=hess.r12,
            r22=hess.r22,
        )
        fl = cfg.r_floor
        L = GainMatrix(
            l11=cfg.gamma_L_psi * grads.psi_d / max(rpd, fl),
            l12=cfg.gamma_L_psi * grads.psi_q / max(rpq, fl),
            l21=cfg.gamma_L_rs * grads.rs_d / max(rrd, fl),
            l22=cfg.gamma_L_rs * grads.rs_q / max(rrq, fl),
        )
    if schedule_n is not None:
        L = gain_schedule(L, schedule_n, cfg)
    return _apply_update(theta, L, eps, box), hess_new, L


def pseudoinverse_2x2(
    R: tuple[tuple[float, float], tuple[float, float]], tol: float = 1e-9
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Moore-Penrose pseudoinverse of a symmetric 2x2 matrix.

    Eigendecomposition based: eigenvalues below tol times the dominant one
    are inverted to zero. Satisfies the four Penrose conditions.
    """
    a, b = R[0][0], R[0][1]
    b2, c = R[1][0], R[1][1]
    scale = max(abs(a), abs(b), abs(c), 1e-300)
    if abs(b - b2) > 1e-9 * scale:
        raise ValueError("pseudoinverse_2x2 expects a symmetric matrix")
    half_sum = 0.5 * (a + c)
    half_diff = 0.5 * (a - c)
    rad = math.hypot(half_diff, b)
    lam1 = half_sum + rad
    lam2 = half_sum - rad
    lam_max = max(abs(lam1), abs(lam2))
    if lam_max == 0.0:
        return ((0.0, 0.0), (0.0, 0.0))
    # eigenvector of lam1, formula chosen to avoid cancellation: lam1 is
    # never close to the smaller diagonal entry
    if abs(b) > 1e-300:
        v1d, v1q = (lam1 - c, b) if a >= c else (b, lam1 - a)
    elif a >= c:
        v1d, v1q = 1.0, 0.0
    else:
        v1d, v1q = 0.0, 1.0
    norm = math.hypot(v1d, v1q)
    v1d, v1q = v1d / norm, v1q / norm
    v2d, v2q = -v1q, v1d
    # the 1e-300 guard keeps subnormal eigenvalues from overflowing
    inv1 = 1.0 / lam1 if abs(lam1) > max(tol * lam_max, 1e-300) else 0.0
    inv2 = 1.0 / lam2 if abs(lam2) > max(tol * lam_max, 1e-300) else 0.0
    p11 = inv1 * v1d * v1d + inv2 * v2d * v2d
    p12 = inv1 * v1d * v1q + inv2 * v2d * v2q
    p22 = inv1 * v1q * v1q + inv2 * v2q * v2q
    return ((p11, p12), (p12, p22))


def gna_update(
    theta: ParameterVector,
    eps: DqVector,
    grads: GradientSet,
    hess: HessianState,
    cfg: GainConfig,
    box: ParameterBox,
    schedule_n: Optional[float] = None,
) -> tuple[ParameterVector, HessianState, GainMatrix]:
    """Gauss-Newton update with 2x2 matrix Hessian.

    The exact inverse is used while det(R) stays above the floor; below it
    the pseudoinverse takes over, which is what keeps the resistance row
    alive at standstill where the matrix is structurally singular.
    """
    g = cfg.gamma_r
    r11 = hess.r11 + g * (grads.psi_d**2 + grads.psi_q**2 - hess.r11)
    r12 = hess.r12 + g * (
        grads.psi_d * grads.rs_d + grads.psi_q * grads.rs_q - hess.r12
    )
    r22 = hess.r22 + g * (grads.rs_d**2 + grads.rs_q**2 - hess.r22)
    det = r11 * r22 - r12 * r12
    if det >= cfg.detR_floor:
        inv = 1.0 / det
        q11, q12, q22 = r22 * inv, -r12 * inv, r11 * inv
        mpp = False
    else:
        (q11, q12), (_, q22) = pseudoinverse_2x2(((r11, r12), (r12, r22)), cfg.mpp_tol)
        mpp = True
    L = _cap_gain(
        GainMatrix(
            l11=cfg.gamma_L_psi * (q11 * grads.psi_d + q12 * grads.rs_d),
            l12=cfg.gamma_L_psi * (q11 * grads.psi_q + q12 * grads.rs_q),
            l21=cfg.gamma_L_rs * (q12 * grads.psi_d + q22 * grads.rs_d),
            l22=cfg.gamma_L_rs * (q12 * grads.psi_q + q22 * grads.rs_q),
        ),
        cfg.gain_cap,
    )
    if schedule_n is not None:
        L = gain_schedule(L, schedule_n, cfg)
    hess_new = HessianState(
        scalar_r=hess.scalar_r,
        rg_psi_d=hess.rg_psi_d,
        rg_psi_q=hess.rg_psi_q,
        rg_rs_d=hess.rg_rs_d,
        rg_rs_q=hess.rg_rs_q,
        r11=r11,
        r12=r12,
        r22=r22,
        mpp_last=mpp,
    )
    return _apply_update(theta, L, eps, box), hess_new, L


def phyint_update(
    theta: ParameterVector,
    eps: DqVector,
    n: float,
    i_hat: DqVector,
    known_x: tuple[float, float],
    cfg: GainConfig,
    box: ParameterBox,
    schedule_n: Optional[float] = None,
) -> tuple[ParameterVector, GainMatrix]:
    """Physically interpreted gains.

    The flux gain is the high-speed inversion of the steady-state error,
    L11 = -gamma * x_d, fed by the d-axis error only. The resistance gains
    invert the steady-state relations per axis; a denominator below its
    current-scaled threshold zeroes that gain for the step instead of
    letting it blow up.
    """
    x_d, x_q = known_x
    r = theta.r_s
    D = r * r + n * n * x_d * x_q
    l11 = -cfg.gamma_L_psi * x_d
    den_d = -r * i_hat.d - n * x_q * i_hat.q
    den_q = -r * i_hat.q + n * x_d * i_hat.d
    th_d = cfg.i_floor * (r + abs(n) * x_q)
    th_q = cfg.i_floor * (r + abs(n) * x_d)
    l21 = cfg.gamma_L_rs * D / den_d if abs(den_d) >= th_d and th_d > 0.0 else 0.0
    l22 = cfg.gamma_L_rs * D / den_q if abs(den_q) >= th_q and th_q > 0.0 else 0.0
    L = GainMatrix(l11=l11, l12=0.0, l21=l21, l22=l22)
    if schedule_n is not None:
        L = gain_schedule(L, schedule_n, cfg)
    return _apply_update(theta, L, eps, box), L


class StepTelemetry(NamedTuple):
    """Per-sample estimator internals for logging and diagnostics."""

    eps_d: float
    eps_q: float
    i_hat_d: float
    i_hat_q: float
    psi_m_hat: float
    r_s_hat: float
    l11: float
    l12: float
    l21: float
    l22: float
    r_scalar: float
    det_R: float
    mpp_used: bool


class RpemEstimator:
    """Stateful per-sample estimator combining predictor, gradients,
    Hessian, gain algorithm, scheduler and projection.

    Per-sample ordering: (reseed on scheduler edges) -> predictor step ->
    prediction error -> gradient step/selection -> Hessian update -> gain
    -> schedule -> parameter update -> projection. The error is therefore
    always evaluated against the previous parameter estimate.
    """

    def __init__(
        self,
        cfg: GainConfig,
        theta0: ParameterVector,
        box: ParameterBox,
        known_x: tuple[float, float],
        omega_n: float,
        t_samp: float,
        i_hat0: DqVector = DqVector(0.0, 0.0),
        n0: float = 0.0,
        gradient_init: Literal["steady_state", "zero"] = "steady_state",
    ) -> None:
        if t_samp <= 0.0:
            raise ConfigError("t_samp must be positive")
        self.cfg = cfg
        self.box = box
        self.known_x = known_x
        self.omega_n = omega_n
        self.t_samp = t_samp
        self.theta = project_parameters(theta0, box)
        if gradient_init == "steady_state":
            g0 = gradient_steady_state(self.theta, known_x, n0, i_hat0,
                                       cfg.ss_denom_floor)
            self.pred = PredictorState(
                i_hat=i_hat0,
                grad_psi=DqVector(g0.psi_d, g0.psi_q),
                grad_rs=DqVector(g0.rs_d, g0.rs_q),
            )
        else:
            self.pred = PredictorState(i_hat=i_hat0)
        self.hess: Optional[HessianState] = None
        self._primed = False
        self._row1_was_on = abs(n0) > abs(cfg.n_lim1)
        self._row2_was_on = abs(n0) < abs(cfg.n_lim2)
        self._row1_off_time = 0.0
        self._row2_off_time = 0.0

    def _reseed_time(self) -> float:
        x_d, x_q = self.known_x
        r = max(self.theta.r_s, 1e-6)
        return 10.0 * max(x_d, x_q) / (r * self.omega_n)

    def _init_hessian(self, grads: GradientSet) -> HessianState:
        tr = grads.psi_d**2 + grads.psi_q**2 + grads.rs_d**2 + grads.rs_q**2
        cfg = self.cfg
        if cfg.r0 is not None:
            r0 = cfg.r0
            return HessianState(scalar_r=r0, r11=0.5 * r0, r12=0.0, r22=0.5 * r0)
        if tr > 1e-6:
            # structure-preserving start: the matrix Hessian begins at the
            # gradient outer product so a structurally singular operating
            # point (standstill) stays singular from the first step
            return HessianState(
                scalar_r=tr,
                rg_psi_d=grads.psi_d**2,
                rg_psi_q=grads.psi_q**2,
                rg_rs_d=grads.rs_d**2,
                rg_rs_q=grads.rs_q**2,
                r11=grads.psi_d**2 + grads.psi_q**2,
                r12=grads.psi_d * grads.rs_d + grads.psi_q * grads.rs_q,
                r22=grads.rs_d**2 + grads.rs_q**2,
            )
        return HessianState(scalar_r=1.0, r11=0.5, r12=0.0, r22=0.5)

    def _selected_gradients(self, n: float) -> GradientSet:
        ss = gradient_steady_state(
            self.theta, self.known_x, n, self.pred.i_hat, self.cfg.ss_denom_floor
        )
        if self.cfg.gradient_mode_psi == "dynamic":
            psi_d, psi_q = self.pred.grad_psi
        else:
            psi_d, psi_q = ss.psi_d, ss.psi_q
        if self.cfg.gradient_mode_rs == "dynamic":
            rs_d, rs_q = self.pred.grad_rs
        else:
            rs_d, rs_q = ss.rs_d, ss.rs_q
        return GradientSet(psi_d, psi_q, rs_d, rs_q)

    def _handle_scheduler_edges(self, n: float, u: DqVector) -> None:
        cfg = self.cfg
        row1_on = abs(n) > abs(cfg.n_lim1)
        row2_on = abs(n) < abs(cfg.n_lim2)
        reseed_after = self._reseed_time()
        reseed = False
        if row1_on and not self._row1_was_on and self._row1_off_time > reseed_after:
            reseed = True
        if row2_on and not self._row2_was_on and self._row2_off_time > reseed_after:
            reseed = True
        if reseed:
            i_ss = predictor_steady_state(self.theta, self.known_x, n, u)
            g = gradient_steady_state(
                self.theta, self.known_x, n, i_ss, cfg.ss_denom_floor
            )
            self.pred = PredictorState(
                i_hat=i_ss,
                grad_psi=DqVector(g.psi_d, g.psi_q),
                grad_rs=DqVector(g.rs_d, g.rs_q),
            )
        dt = self.t_samp
        self._row1_off_time = 0.0 if row1_on else self._row1_off_time + dt
        self._row2_off_time = 0.0 if row2_on else self._row2_off_time + dt
        self._row1_was_on = row1_on
        self._row2_was_on = row2_on

    def step(self, u: DqVector, n: float, i_meas: DqVector) -> StepTelemetry:
        """Consume one sample of applied voltage, speed and measured
        current; advance the estimate."""
        self._handle_scheduler_edges(n, u)
        if self._primed:
            self.pred = _advance_all(
                self.pred, u, n, self.theta, self.known_x, self.omega_n, self.t_samp
            )
        else:
            self._primed = True

        eps = prediction_error(i_meas, self.pred.i_hat)
        grads = self._selected_gradients(n)
        if self.hess is None:
            self.hess = self._init_hessian(grads)

        cfg = self.cfg
        if cfg.algorithm == "sga":
            self.theta, self.hess, L = sga_update(
                self.theta, eps, grads, self.hess, cfg, self.box, schedule_n=n
            )
            r_scalar = self.hess.scalar_r
            det_r = 0.0
            mpp = False
        elif cfg.algorithm == "gna":
            self.theta, self.hess, L = gna_update(
                self.theta, eps, grads, self.hess, cfg, self.box, schedule_n=n
            )
            r_scalar = 0.0
            det_r = self.hess.det()
            mpp = self.hess.mpp_last
        else:
            self.theta, L = phyint_update(
                self.theta, eps, n, self.pred.i_hat, self.known_x, cfg, self.box,
                schedule_n=n,
            )
            r_scalar = 0.0
            det_r = 0.0
            mpp = False

        return StepTelemetry(
            eps_d=eps.d,
            eps_q=eps.q,
            i_hat_d=self.pred.i_hat.d,
            i_hat_q=self.pred.i_hat.q,
            psi_m_hat=self.theta.psi_m,
            r_s_hat=self.theta.r_s,
            l11=L.l11,
            l12=L.l12,
            l21=L.l21,
            l22=L.l22,
            r_scalar=r_scalar,
            det_R=det_r,
            mpp_used=mpp,
        )
