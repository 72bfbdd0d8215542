"""Closed-loop simulation, stiffness measurement and linear analyses."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .control import (
    DiscretePidState,
    amplifier_current,
    closed_loop_matrix,
    design_gains_from_specs,
    pid_step,
)
from .errors import ContactFault, DomainError, InfeasibleSpecError
from .plant import PlantState, _derivative, equilibrium_current
from .sensing import SensorReading, read

TRACE_HEADER = (
    "time_s", "y_mm", "gap_mm", "vel_mm_s", "sensor_v",
    "in_range", "control_v", "current_a", "load_n",
)

# steady-state detector over the final tenth of a run
SETTLE_FRACTION = 0.1
SETTLE_SPREAD_MM = 1e-5
SETTLE_MEAN_VEL = 1e-4


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    duration: float = 2.0
    controller_period: float | None = None
    record_decimation: int = 1
    out_of_range_grace: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not self.duration > self.dt:
            raise DomainError(f"duration ({self.duration}) must exceed dt ({self.dt})")
        if self.record_decimation < 1:
            raise DomainError(f"record_decimation must be >= 1, got {self.record_decimation}")
        ratio = self.period / self.dt
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise DomainError(
                f"controller_period ({self.period}) must be an integer multiple of dt ({self.dt})"
            )

    @property
    def period(self):
        return self.dt if self.controller_period is None else self.controller_period

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    @property
    def substeps(self):
        return int(round(self.period / self.dt))


@dataclass(frozen=True)
class Scenario:
    setpoint_gap: float = 3.0
    load_schedule: tuple = ()
    initial_state: PlantState | None = None

    def __post_init__(self):
        times = [float(t) for t, _ in self.load_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("load event times must be strictly increasing")
        if not all(math.isfinite(float(f)) for _, f in self.load_schedule):
            raise DomainError("loads must be finite")
        object.__setattr__(
            self, "load_schedule",
            tuple((float(t), float(f)) for t, f in self.load_schedule),
        )

    def load_at(self, t):
        load = 0.0
        for t_ev, f in self.load_schedule:
            if t_ev <= t:
                load = f
            else:
                break
        return load

    def initial(self, params):
        if self.initial_state is not None:
            return self.initial_state
        return PlantState(params.gap0 - self.setpoint_gap, 0.0)


@dataclass
class Trace:
    time: np.ndarray
    y: np.ndarray
    gap: np.ndarray
    velocity: np.ndarray
    sensor_v: np.ndarray
    in_range: np.ndarray
    control_v: np.ndarray
    current: np.ndarray
    load: np.ndarray
    setpoint_gap: float
    duration: float
    fault: str | None = None
    fault_message: str = ""

    def __len__(self):
        return len(self.time)

    @property
    def faulted(self):
        return self.fault is not None

    def tail(self):
        """Index slice covering the final tenth of the requested duration."""
        t0 = self.duration * (1.0 - SETTLE_FRACTION)
        return slice(int(np.searchsorted(self.time, t0 - 1e-12)), None)

    @property
    def settled(self):
        if self.faulted or len(self) == 0:
            return False
        s = self.tail()
        y, v = self.y[s], self.velocity[s]
        if len(y) == 0:
            return False
        return bool(
            np.max(np.abs(y - y.mean())) < SETTLE_SPREAD_MM
            and abs(v.mean()) < SETTLE_MEAN_VEL
        )

    def steady_y(self):
        return float(self.y[self.tail()].mean())

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in zip(
            self.time, self.y, self.gap, self.velocity, self.sensor_v,
            self.in_range, self.control_v, self.current, self.load,
        ):
            w.writerow([
                repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                repr(float(row[3])), repr(float(row[4])), int(row[5]),
                repr(float(row[6])), repr(float(row[7])), repr(float(row[8])),
            ])


@dataclass(frozen=True)
class StiffnessEntry:
    load: float  # N
    y_ss: float  # mm, steady deflection in the load direction
    settled: bool


@dataclass(frozen=True)
class StiffnessReport:
    entries: tuple
    compliance: float  # mm/N
    stiffness_class: str  # "finite" | "infinite-within-tolerance" | "unsettled"
    reference_y: float = float("nan")

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("load_n", "deflection_mm", "settled"))
        for e in self.entries:
            w.writerow((repr(e.load), repr(e.y_ss), int(e.settled)))


@dataclass(frozen=True)
class SweepRow:
    zeta: float
    omega_n: float
    kp: float = float("nan")
    td: float = float("nan")
    ki: float = float("nan")
    settling_time: float = float("nan")  # s
    overshoot: float = float("nan")  # %
    stable: bool = False
    feasible: bool = True


SWEEP_HEADER = (
    "zeta", "omega_n", "kp", "td", "ki", "settling_time_s",
    "overshoot_pct", "stable", "feasible",
)


def write_sweep_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow((
            repr(r.zeta), repr(r.omega_n), repr(r.kp), repr(r.td), repr(r.ki),
            repr(r.settling_time), repr(r.overshoot), int(r.stable), int(r.feasible),
        ))


def _rk4(y, v, current, load, dt, p):
    m, k, c, mc, g0 = p
    k1y, k1v = _derivative(y, v, current, load, m, k, c, mc, g0)
    h = 0.5 * dt
    k2y, k2v = _derivative(y + h * k1y, v + h * k1v, current, load, m, k, c, mc, g0)
    k3y, k3v = _derivative(y + h * k2y, v + h * k2v, current, load, m, k, c, mc, g0)
    k4y, k4v = _derivative(y + dt * k3y, v + dt * k3v, current, load, m, k, c, mc, g0)
    s = dt / 6.0
    return (
        y + s * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        v + s * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )


def _packed(params):
    return (params.mass, params.spring_k, params.damping_c, params.magnet_c, params.gap0)


def holding_bias(params, amp, gap_star, load=0.0):
    """Controller bias voltage whose current holds ``gap_star`` under ``load``."""
    return equilibrium_current(params, gap_star, load) / amp.transconductance


def integrate_step(state, current, load, params, dt):
    """One classical RK4 step with current and load held constant."""
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    y, v = _rk4(state.y, state.v, current, load, dt, _packed(params))
    return PlantState(y, v)


def run_closed_loop(params, curve, gains, amp, scenario, cfg, seed=None):
    """Simulate the sensor -> PID -> amplifier -> magnet loop.

    The controller runs every ``cfg.controller_period`` and its current is
    held between ticks. Faults (contact, non-finite state, sensor out of
    range for longer than the grace period) stop the run early; the trace
    up to the fault is returned with ``fault`` set.
    """
    set_dist = curve.distance(scenario.setpoint_gap)
    if not curve.linear_lo <= set_dist <= curve.linear_hi:
        raise DomainError(
            f"setpoint gap {scenario.setpoint_gap} mm puts the sensor at {set_dist} mm, "
            f"outside its linear range [{curve.linear_lo}, {curve.linear_hi}]"
        )
    v_set = curve.voltage(set_dist)
    rng = np.random.default_rng(0 if seed is None else seed) if curve.noise_sigma > 0 else None

    packed = _packed(params)
    gap0 = params.gap0
    dt, n_steps, sub, dec = cfg.dt, cfg.n_steps, cfg.substeps, cfg.record_decimation
    grace = cfg.out_of_range_grace
    events = list(scenario.load_schedule)
    ev_idx, load = 0, 0.0

    st0 = scenario.initial(params)
    y, v = st0.y, st0.v
    cols = [[] for _ in TRACE_HEADER]
    fault, message = None, ""
    pid = None
    sensor_v = control_v = current = 0.0
    ok = True
    oor_since = None

    for k in range(n_steps + 1):
        t = k * dt
        while ev_idx < len(events) and events[ev_idx][0] <= t + 1e-12:
            load = events[ev_idx][1]
            ev_idx += 1
        gap = gap0 - y
        if k % sub == 0:
            dist = curve.distance(gap)
            if dist > 0:
                reading = read(dist, curve, rng)
            else:
                # plate pressed onto the sensor face
                reading = SensorReading(curve.voltage(curve.linear_lo), False)
            sensor_v, ok = reading.voltage, reading.in_range
            error = v_set - sensor_v
            if pid is None:
                pid = DiscretePidState(last_error=error)
            control_v, pid = pid_step(pid, error, cfg.period, gains)
            current = amplifier_current(control_v, amp)
            if ok:
                oor_since = None
            elif oor_since is None:
                oor_since = t
        if k % dec == 0:
            for col, val in zip(cols, (t, y, gap, v, sensor_v, ok, control_v, current, load)):
                col.append(val)
        if oor_since is not None and t - oor_since > grace:
            fault = "sensor-loss"
            message = f"sensor out of range for more than {grace} s (since t={oor_since:.4g} s)"
            break
        if k == n_steps:
            break
        try:
            y, v = _rk4(y, v, current, load, dt, packed)
        except ContactFault as exc:
            fault, message = "contact", f"t={t + dt:.6g} s: {exc}"
            break
        if not (math.isfinite(y) and math.isfinite(v)):
            fault, message = "non-finite", f"state became non-finite at t={t + dt:.6g} s"
            break

    arrays = [np.asarray(c, dtype=float) for c in cols]
    arrays[5] = np.asarray(cols[5], dtype=bool)
    return Trace(*arrays, setpoint_gap=scenario.setpoint_gap, duration=cfg.duration,
                 fault=fault, fault_message=message)


def measure_stiffness(params, curve, gains, amp, loads, cfg, setpoint_gap=3.0,
                      compliance_tol=1e-4, load_time=0.0):
    """Static load-deflection test.

    A zero-load run fixes the reference position; every load is then applied
    as a step at ``load_time`` from the zero-load equilibrium and the plate
    is allowed to settle. Deflections are positive in the load direction
    (downward), and the compliance is their least-squares slope against load.
    """
    loads = [float(f) for f in loads]
    if not loads:
        raise DomainError("at least one load is required")
    ref = run_closed_loop(params, curve, gains, amp, Scenario(setpoint_gap), cfg)
    y_ref = ref.steady_y() if not ref.faulted else float("nan")
    entries = []
    for f in loads:
        tr = run_closed_loop(
            params, curve, gains, amp, Scenario(setpoint_gap, ((load_time, f),)), cfg
        )
        y_ss = y_ref - tr.steady_y() if not tr.faulted else float("nan")
        entries.append(StiffnessEntry(f, y_ss, tr.settled))

    x = np.array([e.load for e in entries])
    d = np.array([e.y_ss for e in entries])
    if len(np.unique(x)) >= 2:
        compliance = float(np.polyfit(x, d, 1)[0])
    elif x[0] != 0:
        compliance = float(d[0] / x[0])
    else:
        compliance = float("nan")

    if not ref.settled or not all(e.settled for e in entries) or not math.isfinite(compliance):
        cls = "unsettled"
    elif abs(compliance) < compliance_tol:
        cls = "infinite-within-tolerance"
    else:
        cls = "finite"
    return StiffnessReport(tuple(entries), compliance, cls, y_ref)


def stability_analysis(lm, gains, loop_chain):
    """Eigenvalues of the ideal linearised closed loop and a Hurwitz flag."""
    eig = np.linalg.eigvals(closed_loop_matrix(lm, gains, loop_chain))
    return eig, bool(np.all(eig.real < 0))


def _load_step_response(a, mass_eff, step, dt, n):
    """Exactly sampled deflection response of dx/dt = A x + b*step from rest."""
    dim = a.shape[0]
    b = np.zeros(dim)
    b[-1] = -step / mass_eff
    aug = np.zeros((dim + 1, dim + 1))
    aug[:dim, :dim] = a
    aug[:dim, dim] = b
    phi = expm(aug * dt)
    trans, gamma = phi[:dim, :dim], phi[:dim, dim]
    out = np.empty(n + 1)
    x = np.zeros(dim)
    y_idx = dim - 2
    out[0] = 0.0
    for k in range(1, n + 1):
        x = trans @ x + gamma
        out[k] = x[y_idx]
    return out


def step_metrics(t, y, final, reference, direction=None):
    """2% settling time and percent overshoot past ``final``.

    ``reference`` is the magnitude the band and overshoot are measured
    against (the step size for a PD response). ``direction`` is the sign of
    travel toward ``final``; by default it is taken from ``final - y[0]``.
    """
    band = 0.02 * reference
    outside = np.flatnonzero(np.abs(y - final) > band)
    if outside.size == 0:
        ts = t[0]
    elif outside[-1] + 1 < len(t):
        ts = t[outside[-1] + 1]
    else:
        ts = float("nan")
    if direction is None:
        direction = math.copysign(1.0, final - y[0])
    over = max(0.0, float(np.max(direction * (y - final))))
    return float(ts), 100.0 * over / reference


def gain_sweep(specs_grid, lm, loop_gain, scenario, cfg, ki_ratio=0.0):
    """Design gains for every spec and score the linear load-step response.

    Runs the ideal linearised loop (no sensor clamp, no saturation). With
    the default ``ki_ratio = 0`` the loop is PD and the response settles to
    a finite deflection. With integral action the deflection returns to
    zero; the band and overshoot are then taken relative to the peak
    deflection.
    """
    specs_grid = list(specs_grid)
    if not specs_grid:
        raise DomainError("specs grid is empty")
    if not scenario.load_schedule:
        raise DomainError("scenario needs at least one load step")
    step = scenario.load_schedule[0][1]
    if step == 0:
        raise DomainError("first load step must be nonzero")
    n = cfg.n_steps
    t = np.arange(n + 1) * cfg.dt
    rows = []
    for spec in specs_grid:
        try:
            gains = design_gains_from_specs(spec, lm, loop_gain, ki_ratio=ki_ratio)
        except InfeasibleSpecError:
            rows.append(SweepRow(spec.zeta, spec.omega_n, feasible=False))
            continue
        a = closed_loop_matrix(lm, gains, loop_gain)
        _, stable = stability_analysis(lm, gains, loop_gain)
        y = _load_step_response(a, lm.mass_eff, step, cfg.dt, n)
        direction = None
        if a.shape[0] == 2:
            final = -step / (lm.net_stiffness + lm.k_i * loop_gain * gains.kp)
            reference = abs(final)
        else:
            final = 0.0
            peak = int(np.argmax(np.abs(y)))
            reference = abs(float(y[peak]))
            direction = -math.copysign(1.0, y[peak])
        ts, os_pct = step_metrics(t, y, final, reference, direction)
        rows.append(SweepRow(spec.zeta, spec.omega_n, gains.kp, gains.td, gains.ki,
                             ts, os_pct, stable, True))
    return rows

