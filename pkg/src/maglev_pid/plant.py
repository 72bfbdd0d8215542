"""Spring-suspended plate attracted by an electromagnet.

Coordinates and units
---------------------
``y`` is the upward displacement of the plate (mm) measured from the
position the springs hold it at with zero coil current and zero load, so
the magnet gap is ``gap0 - y``. Gravity is absorbed into that spring
preload. Forces are in newtons, currents in amperes and time in seconds;
mass stays in kilograms, so accelerations carry a factor of 1000 to come
out in mm/s².

The electromagnet is modelled with the reluctance force law

    F = magnet_c * i**2 / gap**2

which attracts the plate upward (toward the magnet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ContactFault, DomainError, NoEquilibriumError

MM_PER_M = 1000.0

#: Half-width (mm) of the region around the operating point where the
#: linearised model is trusted.
LINEAR_HALF_WIDTH = 1.2


@dataclass(frozen=True)
class PlantParams:
    mass: float = 0.5  # kg
    spring_k: float = 2.0  # N/mm, all four springs combined
    damping_c: float = 0.01  # N*s/mm
    # N*mm^2/A^2; makes k_i = 7.5 N/A at a 3 mm gap with the other defaults
    magnet_c: float = 31.640625
    gap0: float = 5.0  # mm
    gravity: float = 9810.0  # mm/s^2, informational only

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"mass must be > 0, got {self.mass}")
        if not self.spring_k >= 0:
            raise DomainError(f"spring_k must be >= 0, got {self.spring_k}")
        if not self.damping_c >= 0:
            raise DomainError(f"damping_c must be >= 0, got {self.damping_c}")
        if not self.magnet_c > 0:
            raise DomainError(f"magnet_c must be > 0, got {self.magnet_c}")
        if not self.gap0 > 0:
            raise DomainError(f"gap0 must be > 0, got {self.gap0}")

    @property
    def mass_eff(self):
        """Mass in N*s^2/mm, the unit consistent with N/mm stiffness."""
        return self.mass / MM_PER_M

    def gap(self, y):
        return self.gap0 - y


@dataclass(frozen=True)
class PlantState:
    y: float = 0.0  # mm, upward
    v: float = 0.0  # mm/s


@dataclass(frozen=True)
class OperatingPoint:
    gap_star: float
    current_star: float
    load_star: float = 0.0


@dataclass(frozen=True)
class LinearModel:
    """Plant linearised about an operating point.

    ``net_stiffness`` already includes the (negative) magnetic stiffness
    ``k_x``; a negative value means the uncontrolled plant is unstable.
    """

    mass: float  # kg
    damping: float  # N*s/mm
    net_stiffness: float  # N/mm
    k_i: float  # N/A
    k_x: float  # N/mm, <= 0
    operating_point: OperatingPoint
    linear_half_width: float = LINEAR_HALF_WIDTH

    @property
    def mass_eff(self):
        return self.mass / MM_PER_M

    def in_trusted_region(self, gap):
        return abs(gap - self.operating_point.gap_star) <= self.linear_half_width


def magnet_force(current, gap, params):
    if not gap > 0:
        raise DomainError(f"gap must be > 0 (plate-magnet contact), got {gap}")
    if current < 0:
        raise DomainError(f"current must be >= 0, got {current}")
    return params.magnet_c * current * current / (gap * gap)


def dynamics(state, current, load, params):
    """Return ``(dy/dt, dv/dt)`` in (mm/s, mm/s²).

    ``load`` is a downward force on the plate in newtons.
    """
    return _derivative(
        state.y, state.v, current, load,
        params.mass, params.spring_k, params.damping_c, params.magnet_c, params.gap0,
    )


def _derivative(y, v, current, load, mass, spring_k, damping_c, magnet_c, gap0):
    gap = gap0 - y
    if not gap > 0:
        raise ContactFault(f"plate reached the magnet face (gap={gap:.6g} mm)")
    force = -spring_k * y - damping_c * v + magnet_c * current * current / (gap * gap) - load
    return v, MM_PER_M * force / mass


def required_force(params, gap_star, load=0.0):
    """Magnet force needed to hold the plate at ``gap_star`` under ``load``."""
    return params.spring_k * (params.gap0 - gap_star) + load


def equilibrium_current(params, gap_star, load=0.0):
    if not gap_star > 0:
        raise DomainError(f"gap_star must be > 0, got {gap_star}")
    force = required_force(params, gap_star, load)
    if force < 0:
        raise NoEquilibriumError(
            f"holding gap {gap_star} mm under load {load} N needs a repulsive "
            f"force of {-force:.6g} N; the magnet can only attract"
        )
    return gap_star * math.sqrt(force / params.magnet_c)


def operating_point(params, gap_star, load=0.0):
    return OperatingPoint(gap_star, equilibrium_current(params, gap_star, load), load)


def equilibrium_residual(params, op):
    """Net force (N) on the plate at rest at ``op``."""
    y = params.gap0 - op.gap_star
    return (
        -params.spring_k * y
        + magnet_force(op.current_star, op.gap_star, params)
        - op.load_star
    )


def linearize(params, op, tol=1e-9):
    residual = equilibrium_residual(params, op)
    scale = max(1.0, abs(op.load_star), params.spring_k * abs(params.gap0 - op.gap_star))
    if abs(residual) > tol * scale:
        raise NoEquilibriumError(
            f"operating point is not an equilibrium (force residual {residual:.3g} N)"
        )
    g, i = op.gap_star, op.current_star
    k_i = 2.0 * params.magnet_c * i / g**2
    k_x = -2.0 * params.magnet_c * i * i / g**3
    return LinearModel(
        mass=params.mass,
        damping=params.damping_c,
        net_stiffness=params.spring_k + k_x,
        k_i=k_i,
        k_x=k_x,
        operating_point=op,
    )


def calibrate_to_current_coefficient(target_k_i, gap_star, params, load=0.0, i_max=None):
    """Choose ``magnet_c`` so the plant linearises to ``target_k_i`` at ``gap_star``.

    With F = c*i²/g² the current coefficient is 2F/i, so the operating
    current is fixed by the required force alone: i* = 2F/k_i.
    """
    if not target_k_i > 0:
        raise DomainError(f"target current coefficient must be > 0, got {target_k_i}")
    if not gap_star > 0:
        raise DomainError(f"gap_star must be > 0, got {gap_star}")
    force = required_force(params, gap_star, load)
    if not force > 0:
        raise NoEquilibriumError(
            f"no magnet force is needed at gap {gap_star} mm, so the current "
            "coefficient cannot be set"
        )
    current = 2.0 * force / target_k_i
    if i_max is not None and current > i_max:
        raise NoEquilibriumError(
            f"operating current {current:.6g} A exceeds the amplifier ceiling {i_max:.6g} A"
        )
    return replace(params, magnet_c=force * gap_star**2 / current**2)
