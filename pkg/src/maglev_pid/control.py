"""PD/PID control law, amplifier, and gain design by pole placement.

The controller acts on the voltage error ``e`` with

    u = bias + kp * (e + td * de/dt + ki * integral(e))

i.e. the transfer function kp * (1 + s*td + ki/s). With ``kp = 1`` this is
the textbook unity-proportional PID form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleSpecError


@dataclass(frozen=True)
class PidGains:
    kp: float = 1.0
    td: float = 0.0  # s
    ki: float = 0.0  # 1/s
    deriv_filter_n: float = 10.0
    out_min: float = 0.0  # V
    out_max: float = 24.0  # V
    bias: float = 0.0  # V

    def __post_init__(self):
        if not self.td >= 0:
            raise DomainError(f"td must be >= 0, got {self.td}")
        if not self.ki >= 0:
            raise DomainError(f"ki must be >= 0, got {self.ki}")
        if not self.deriv_filter_n > 0:
            raise DomainError(f"deriv_filter_n must be > 0, got {self.deriv_filter_n}")
        if not self.out_min < self.out_max:
            raise DomainError(
                f"out_min ({self.out_min}) must be < out_max ({self.out_max})"
            )


@dataclass(frozen=True, slots=True)
class DiscretePidState:
    integrator: float = 0.0  # V*s
    deriv_state: float = 0.0  # V/s, filtered de/dt
    last_error: float = 0.0  # V
    saturated_flag: bool = False


@dataclass(frozen=True)
class AmplifierModel:
    transconductance: float = 0.1  # A/V
    v_ceiling: float = 24.0  # V

    def __post_init__(self):
        if not self.transconductance > 0:
            raise DomainError(f"transconductance must be > 0, got {self.transconductance}")
        if not self.v_ceiling > 0:
            raise DomainError(f"v_ceiling must be > 0, got {self.v_ceiling}")

    @property
    def i_max(self):
        return self.transconductance * self.v_ceiling


@dataclass(frozen=True)
class DesignSpecs:
    zeta: float = 0.7
    omega_n: float = 150.0  # rad/s

    def __post_init__(self):
        if not 0 < self.zeta < 1:
            raise DomainError(f"zeta must lie in (0, 1), got {self.zeta}")
        if not self.omega_n > 0:
            raise DomainError(f"omega_n must be > 0, got {self.omega_n}")


def pid_transfer_coeffs(gains):
    """Numerator and denominator of kp*(1 + s*td + ki/s), highest power first.

    Leading zeros are stripped and a pure pole/zero at the origin is
    cancelled when ``ki == 0``.
    """
    kp, td, ki = gains.kp, gains.td, gains.ki
    num = np.array([kp * td, kp, kp * ki], dtype=float)
    den = np.array([1.0, 0.0])
    if ki == 0:
        num, den = num[:-1], den[:-1]
    nz = np.flatnonzero(num)
    num = num[nz[0]:] if nz.size else np.array([0.0])
    return num, den


def pid_step(state, error, dt, gains):
    """Advance the discrete controller by one sample.

    Backward-Euler integral, backward difference for the derivative passed
    through a first-order filter with time constant ``td / deriv_filter_n``.
    The integral is frozen while the output is clamped and the error would
    push it further into saturation.
    """
    if not math.isfinite(error):
        raise DomainError(f"controller error must be finite, got {error}")
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    kp, td, ki = gains.kp, gains.td, gains.ki

    tf = td / gains.deriv_filter_n
    deriv = (tf * state.deriv_state + (error - state.last_error)) / (tf + dt)

    base = gains.bias + kp * (error + td * deriv)
    integ = state.integrator + error * dt
    raw = base + kp * ki * integ
    if raw > gains.out_max:
        if kp * ki * error > 0:
            integ = state.integrator
            raw = base + kp * ki * integ
    elif raw < gains.out_min:
        if kp * ki * error < 0:
            integ = state.integrator
            raw = base + kp * ki * integ

    saturated = raw > gains.out_max or raw < gains.out_min
    out = min(max(raw, gains.out_min), gains.out_max)
    return out, DiscretePidState(integ, deriv, error, saturated)


def amplifier_current(control_voltage, amp):
    """One-quadrant drive: the coil current is never negative."""
    v = min(max(control_voltage, 0.0), amp.v_ceiling)
    return v * amp.transconductance


def closed_loop_matrix(lm, gains, loop_chain):
    """State matrix of the ideal linearised loop.

    States are (y, v) for PD, or (integral of y, y, v) when the integral
    term is active. ``loop_chain`` is sensor gain times amplifier
    transconductance (A/mm).
    """
    m = lm.mass_eff
    g = lm.k_i * loop_chain
    kp, td, ki = gains.kp, gains.td, gains.ki
    stiff = -(lm.net_stiffness + g * kp) / m
    damp = -(lm.damping + g * kp * td) / m
    if kp * ki != 0:
        return np.array([
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-g * kp * ki / m, stiff, damp],
        ])
    return np.array([[0.0, 1.0], [stiff, damp]])


def is_hurwitz(a):
    return bool(np.all(np.linalg.eigvals(a).real < 0))


def design_gains_from_specs(
    specs,
    lm,
    loop_gain,
    ki_ratio=0.1,
    bias=0.0,
    deriv_filter_n=10.0,
    out_min=0.0,
    out_max=24.0,
):
    """Place the PD pole pair at the requested (zeta, omega_n).

    Matching  m s² + (c + G kp td) s + (k_net + G kp)  to
    m (s² + 2 zeta omega_n s + omega_n²)  with  G = k_i * loop_gain  gives
    kp and td in closed form. The integral coefficient is
    ``ki_ratio * omega_n``, a third pole a decade below the pair by default.
    """
    if not lm.k_i > 0:
        raise DomainError(f"current coefficient must be > 0, got {lm.k_i}")
    if not loop_gain > 0:
        raise DomainError(f"loop chain gain must be > 0, got {loop_gain}")
    m = lm.mass_eff
    g = lm.k_i * loop_gain
    w, z = specs.omega_n, specs.zeta
    stiffness_gap = m * w * w - lm.net_stiffness
    damping_gap = 2.0 * z * w * m - lm.damping
    scale = max(abs(m * w * w), abs(lm.net_stiffness))
    if abs(stiffness_gap) <= 1e-12 * scale:
        if abs(damping_gap) > 1e-12 * max(abs(lm.damping), 2.0 * z * w * m):
            raise InfeasibleSpecError(
                "plant already has the requested stiffness; damping cannot be changed with kp = 0"
            )
        kp, td = 0.0, 0.0
    elif stiffness_gap < 0:
        raise InfeasibleSpecError(
            f"omega_n={w} needs negative kp (plant stiffness {lm.net_stiffness:.4g} N/mm "
            f"exceeds m*omega_n^2 = {m * w * w:.4g} N/mm)"
        )
    else:
        kp = stiffness_gap / g
        td = damping_gap / (g * kp)
        if td < 0:
            raise InfeasibleSpecError(
                f"zeta={z}, omega_n={w} needs negative td (plant damping "
                f"{lm.damping:.4g} exceeds the target {2.0 * z * w * m:.4g} N*s/mm)"
            )
    gains = PidGains(
        kp=kp,
        td=td,
        ki=ki_ratio * w,
        deriv_filter_n=deriv_filter_n,
        out_min=out_min,
        out_max=out_max,
        bias=bias,
    )
    if not is_hurwitz(closed_loop_matrix(lm, gains, loop_gain)):
        raise InfeasibleSpecError(
            f"integral coefficient ki={gains.ki:.4g} destabilises the loop "
            f"for zeta={z}, omega_n={w}"
        )
    return gains
