"""Phasor helpers, per-unit bases, rotated setpoints and the grid model.

Electrical quantities are plain Python ``complex`` numbers (alpha-beta
components in per-unit).  Everything inside the package is per-unit; the
:class:`PerUnitBase` is only used when converting at the I/O boundary.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

from .errors import DomainError

TWO_PI_50 = 2.0 * math.pi * 50.0


def as_phasor(x) -> complex:
    """Coerce ``x`` to ``complex``, rejecting NaN/Inf components."""
    z = complex(x)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise DomainError(f"non-finite phasor {z!r}")
    return z


def polar(x) -> tuple[float, float]:
    """Magnitude and angle in (-pi, pi]; the zero phasor has angle 0."""
    z = complex(x)
    mag = abs(z)
    if mag == 0.0:
        return 0.0, 0.0
    ang = math.atan2(z.imag, z.real)
    if ang == -math.pi:
        ang = math.pi
    return mag, ang


def from_polar(mag: float, angle: float) -> complex:
    return cmath.rect(mag, angle)


def to_sync_frame(x, theta: float) -> complex:
    """Express ``x`` in a frame rotated by ``theta``, i.e. ``x * exp(-j theta)``."""
    return complex(x) * cmath.exp(-1j * theta)


@dataclass(frozen=True)
class PerUnitBase:
    voltage_base: float = 690.0
    power_base: float = 2.0e6
    frequency_base: float = TWO_PI_50

    def __post_init__(self):
        for name in ("voltage_base", "power_base", "frequency_base"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")

    @property
    def current_base(self) -> float:
        return self.power_base / self.voltage_base

    @property
    def impedance_base(self) -> float:
        return self.voltage_base**2 / self.power_base


@dataclass(frozen=True)
class RotatedSetpoint:
    """``rho_phi + j sigma_phi = exp(j varphi) (p* - j q*) / v*^2``.

    ``rho_phi`` is the real part and ``sigma_phi`` the imaginary part of the
    rotated ratio; ``raw_ratio`` keeps the unrotated ``(p* - j q*) / v*^2``.
    """

    rho_phi: float
    sigma_phi: float
    raw_ratio: complex

    @property
    def rotated(self) -> complex:
        return complex(self.rho_phi, self.sigma_phi)

    def __abs__(self):
        return abs(self.rotated)


def rotated_setpoint(p_star: float, q_star: float, v_star: float, varphi: float) -> RotatedSetpoint:
    if not v_star > 0:
        raise DomainError(f"v_star must be positive, got {v_star}")
    if not 0.0 <= varphi <= math.pi / 2:
        raise DomainError(f"varphi must lie in [0, pi/2], got {varphi}")
    raw = complex(p_star, -q_star) / v_star**2
    rot = cmath.exp(1j * varphi) * raw
    return RotatedSetpoint(rot.real, rot.imag, raw)


@dataclass(frozen=True)
class GridModel:
    """Stiff grid ``v_g * exp(j theta_g)``; ``theta_g`` is its angle at t = 0."""

    v_g: float = 1.0
    theta_g: float = 0.0
    omega_g: float = TWO_PI_50
    omega_0: float = TWO_PI_50

    def __post_init__(self):
        if self.v_g < 0:
            raise DomainError("grid voltage magnitude must be nonnegative")

    @property
    def omega_delta(self) -> float:
        return self.omega_0 - self.omega_g

    def with_voltage(self, v_g: float) -> "GridModel":
        return replace(self, v_g=float(v_g))

    def angle(self, t: float) -> float:
        """Grid angle at time ``t`` measured in the frame rotating at ``omega_0``."""
        return self.theta_g - self.omega_delta * t

    def phasor(self, t: float) -> complex:
        return cmath.rect(self.v_g, self.angle(t))
