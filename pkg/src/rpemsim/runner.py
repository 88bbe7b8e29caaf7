"""Closed-loop scenario execution: plant + controller + estimator at a
fixed sampling period, with deterministic logging and convergence metrics.

The loop applies the voltage commanded from the sample-k measurement over
the following period (one-sample digital latency); the estimator consumes
exactly the voltage and speed that drove the plant over the interval it
predicts, so the prediction error carries parameter information only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .control import (
    PiState,
    References,
    current_controller,
    limit_current,
    mtpa_reference,
    speed_controller,
    tune_current_loops,
    tune_speed_loop,
)
from .estimator import RpemEstimator
from .plant import (
    MachineParams,
    PlantState,
    apply_param_event,
    integrate_electrical,
    steady_state_voltage,
    torque,
)
from .pu import DqVector
from .scenario import Scenario, schedule_value


class SimulationDiverged(RuntimeError):
    """A state variable left the finite range; diagnostic carries the time
    and last valid sample."""

    def __init__(self, t: float, detail: str):
        super().__init__(f"simulation diverged at t={t:.6f}s: {detail}")
        self.t = t
        self.detail = detail


@dataclass
class ConvergenceReport:
    """Post-hoc convergence summary for one estimated parameter."""

    converged: bool
    convergence_time: Optional[float]
    steady_state_error: float
    overshoot: float
    band: float


LOG_COLUMNS = [
    "t", "n", "i_d", "i_q", "i_hat_d", "i_hat_q", "eps_d", "eps_q",
    "psi_m_hat", "r_s_hat", "psi_m_true", "r_s_true",
    "L11", "L12", "L21", "L22", "r", "detR",
]


@dataclass
class RunResult:
    """Decimated log table plus full-rate estimate trajectories and the
    per-parameter convergence reports."""

    scenario_name: str
    log: dict[str, np.ndarray]            # decimated, LOG_COLUMNS keys
    t_full: np.ndarray                    # full rate, for metrics
    psi_m_hat: np.ndarray
    r_s_hat: np.ndarray
    psi_m_true: np.ndarray
    r_s_true: np.ndarray
    reports: dict[str, ConvergenceReport]
    total_steps: int
    mpp_steps: int

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_COLUMNS)
            n_rows = len(self.log["t"])
            cols = [self.log[c] for c in LOG_COLUMNS]
            for i in range(n_rows):
                w.writerow([f"{col[i]:.10g}" for col in cols])


def convergence_metrics(
    t: np.ndarray,
    trajectory: np.ndarray,
    reference: float,
    band: float = 0.01,
    t0: float = 0.0,
    step_size: Optional[float] = None,
) -> ConvergenceReport:
    """Convergence time, steady-state error and overshoot of a trajectory.

    convergence_time: first instant (measured from t0) after which the
    trajectory stays inside +-band*|reference| until the end.
    steady_state_error: mean relative error over the final 10 percent.
    overshoot: largest excursion past the reference, in the direction of
    travel, relative to the step size.
    """
    if len(t) == 0:
        raise ValueError("empty trajectory")
    if band <= 0.0:
        raise ValueError("band must be positive")
    mask = t >= t0
    tt = t[mask]
    traj = trajectory[mask]
    tol = band * abs(reference)
    inside = np.abs(traj - reference) <= tol
    if inside[-1]:
        last_out = np.where(~inside)[0]
        first_idx = 0 if len(last_out) == 0 else last_out[-1] + 1
        converged = True
        conv_time = float(tt[first_idx] - t0)
    else:
        converged = False
        conv_time = None

    tail = max(1, int(0.1 * len(trajectory)))
    sse = float(np.mean(trajectory[-tail:] - reference) / reference)

    if step_size is None:
        step_size = abs(traj[0] - reference)
    if step_size > 0.0:
        direction = math.copysign(1.0, reference - traj[0])
        excursion = np.max((traj - reference) * direction)
        overshoot = float(max(0.0, excursion) / step_size)
    else:
        overshoot = 0.0
    return ConvergenceReport(
        converged=converged,
        convergence_time=conv_time,
        steady_state_error=sse,
        overshoot=overshoot,
        band=band,
    )


def _check_finite(t: float, step: int, last_valid: str, *pairs: tuple[str, float]) -> None:
    for name, value in pairs:
        if not math.isfinite(value):
            raise SimulationDiverged(
                t, f"{name} = {value} at step {step}; last valid sample {last_valid}"
            )


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario; deterministic for a given seed."""
    base, params0 = scenario.validate()
    omega_n = base.omega_n
    dt = scenario.t_samp_s
    n_steps = int(round(scenario.duration_s / dt))
    cfg = scenario.estimator.gain_config()

    tau_sched = scenario.control.tau_ref
    speed_sched = scenario.speed_ref_schedule()
    load_sched = scenario.load_torque_schedule()
    mech = scenario.mechanical()
    speed_mode = scenario.plant.speed_mode
    torque_mode = scenario.control.mode == "torque"
    substeps = scenario.plant.substeps

    # initial operating point: settled at the t=0 references
    n0 = schedule_value(speed_sched, 0.0)
    tau0 = (
        schedule_value(tau_sched, 0.0)
        if torque_mode
        else schedule_value(load_sched, 0.0)
    )
    theta0 = scenario.initial_theta(params0)
    box = scenario.parameter_box(params0)
    known_x = (params0.x_d, params0.x_q)
    theta0_params = MachineParams(
        x_d=known_x[0], x_q=known_x[1], r_s=theta0.r_s, psi_m=theta0.psi_m
    )
    id0, iq0 = limit_current(
        *mtpa_reference(tau0, theta0_params), scenario.control.i_max_pu
    )
    i0 = DqVector(id0, iq0)
    u0 = steady_state_voltage(params0, i0, n0)

    plant = PlantState(i=i0, n=n0, theta=0.0, params=params0)
    estimator = RpemEstimator(
        cfg=cfg,
        theta0=theta0,
        box=box,
        known_x=known_x,
        omega_n=omega_n,
        t_samp=dt,
        i_hat0=i0,
        n0=n0,
    )

    pi_d, pi_q = tune_current_loops(
        theta0_params, omega_n, dt, scenario.control.u_max_pu
    )
    ctl = scenario.control
    if ctl.kp_d is not None or ctl.ti_d is not None:
        pi_d = PiState(
            kp=ctl.kp_d if ctl.kp_d is not None else pi_d.kp,
            ti=ctl.ti_d if ctl.ti_d is not None else pi_d.ti,
            output_limit=pi_d.output_limit,
        )
    if ctl.kp_q is not None or ctl.ti_q is not None:
        pi_q = PiState(
            kp=ctl.kp_q if ctl.kp_q is not None else pi_q.kp,
            ti=ctl.ti_q if ctl.ti_q is not None else pi_q.ti,
            output_limit=pi_q.output_limit,
        )
    # preload integrators so the loop starts in steady state
    ff_d0 = -n0 * theta0_params.x_q * i0.q
    ff_q0 = n0 * (theta0_params.x_d * i0.d + theta0_params.psi_m)
    pi_d = PiState(pi_d.kp, pi_d.ti, u0.d - ff_d0, pi_d.output_limit)
    pi_q = PiState(pi_q.kp, pi_q.ti, u0.q - ff_q0, pi_q.output_limit)
    pi_n = tune_speed_loop(mech.inertia_H, ctl.tau_max_pu)
    pi_n = PiState(pi_n.kp, pi_n.ti, tau0, pi_n.output_limit)

    rng = np.random.default_rng(scenario.seed)
    sigma = scenario.plant.noise_sigma_pu
    # per-step draw order keeps realizations prefix-stable across durations
    noise = rng.standard_normal((n_steps, 2)) * sigma if sigma > 0.0 else None

    pending_events = sorted(scenario.parameter_events(), key=lambda e: e.time_s)
    ev_idx = 0

    dec = scenario.log_decimation
    n_log = (n_steps + dec - 1) // dec
    log = {c: np.empty(n_log) for c in LOG_COLUMNS}
    t_full = np.empty(n_steps)
    psi_hat_full = np.empty(n_steps)
    rs_hat_full = np.empty(n_steps)
    psi_true_full = np.empty(n_steps)
    rs_true_full = np.empty(n_steps)

    u_applied = u0
    n_applied = n0
    mpp_steps = 0
    log_row = 0
    last_valid = "(initial state)"

    for k in range(n_steps):
        t = k * dt
        while ev_idx < len(pending_events) and pending_events[ev_idx].time_s <= t:
            plant.params = apply_param_event(plant.params, pending_events[ev_idx])
            ev_idx += 1

        if speed_mode == "prescribed":
            plant.n = schedule_value(speed_sched, t)
        n_now = plant.n

        if noise is not None:
            i_meas = DqVector(
                plant.i.d + noise[k, 0], plant.i.q + noise[k, 1]
            )
        else:
            i_meas = plant.i

        tele = estimator.step(u_applied, n_applied, i_meas)
        if tele.mpp_used:
            mpp_steps += 1

        if torque_mode:
            tau_cmd = schedule_value(tau_sched, t)
        else:
            tau_cmd, pi_n = speed_controller(
                schedule_value(speed_sched, t), n_now, pi_n, dt
            )
        theta_params = MachineParams(
            x_d=known_x[0], x_q=known_x[1],
            r_s=tele.r_s_hat, psi_m=tele.psi_m_hat,
        )
        id_ref, iq_ref = limit_current(
            *mtpa_reference(tau_cmd, theta_params), ctl.i_max_pu
        )
        refs = References(
            torque_ref=tau_cmd, id_ref=id_ref, iq_ref=iq_ref,
            speed_ref=schedule_value(speed_sched, t),
        )
        u_cmd, pi_d, pi_q = current_controller(
            refs, i_meas, n_now, theta_params, pi_d, pi_q, dt, ctl.u_max_pu
        )

        sub_dt = dt / substeps
        for _ in range(substeps):
            plant = integrate_electrical(
                plant, u_cmd, sub_dt, "trapezoidal", omega_n
            )
        tau_e = torque(plant)
        if speed_mode == "dynamic":
            plant.n = plant.n + dt * (
                tau_e - schedule_value(load_sched, t)
            ) / (2.0 * mech.inertia_H)
        plant.theta = (plant.theta + n_now * omega_n * dt) % (2.0 * math.pi)

        _check_finite(
            t, k, last_valid,
            ("i_d", plant.i.d), ("i_q", plant.i.q), ("n", plant.n),
            ("psi_m_hat", tele.psi_m_hat), ("r_s_hat", tele.r_s_hat),
            ("u_d", u_cmd.d), ("u_q", u_cmd.q),
        )
        last_valid = (
            f"(t={t:.6f}, i=({plant.i.d:.6g}, {plant.i.q:.6g}), "
            f"theta=({tele.psi_m_hat:.6g}, {tele.r_s_hat:.6g}))"
        )

        t_full[k] = t
        psi_hat_full[k] = tele.psi_m_hat
        rs_hat_full[k] = tele.r_s_hat
        psi_true_full[k] = plant.params.psi_m
        rs_true_full[k] = plant.params.r_s
        if k % dec == 0:
            for col, val in (
                ("t", t), ("n", n_now), ("i_d", i_meas.d), ("i_q", i_meas.q),
                ("i_hat_d", tele.i_hat_d), ("i_hat_q", tele.i_hat_q),
                ("eps_d", tele.eps_d), ("eps_q", tele.eps_q),
                ("psi_m_hat", tele.psi_m_hat), ("r_s_hat", tele.r_s_hat),
                ("psi_m_true", plant.params.psi_m),
                ("r_s_true", plant.params.r_s),
                ("L11", tele.l11), ("L12", tele.l12),
                ("L21", tele.l21), ("L22", tele.l22),
                ("r", tele.r_scalar), ("detR", tele.det_R),
            ):
                log[col][log_row] = val
            log_row += 1

        u_applied = u_cmd
        n_applied = n_now

    reports: dict[str, ConvergenceReport] = {}
    for target, hat, true in (
        ("psi_m", psi_hat_full, psi_true_full),
        ("r_s", rs_hat_full, rs_true_full),
    ):
        ev_times = [
            ev.time_s for ev in scenario.parameter_events() if ev.target == target
        ]
        t0 = max(ev_times) if ev_times else 0.0
        reference = float(true[-1])
        if ev_times:
            before = float(true[np.searchsorted(t_full, t0) - 1]) if t0 > 0 else float(true[0])
            step_size = abs(reference - before)
        else:
            step_size = None
        reports[target] = convergence_metrics(
            t_full, hat, reference, band=0.01, t0=t0, step_size=step_size
        )

    return RunResult(
        scenario_name=scenario.name,
        log={c: log[c][:log_row] for c in LOG_COLUMNS},
        t_full=t_full,
        psi_m_hat=psi_hat_full,
        r_s_hat=rs_hat_full,
        psi_m_true=psi_true_full,
        r_s_true=rs_true_full,
        reports=reports,
        total_steps=n_steps,
        mpp_steps=mpp_steps,
    )
