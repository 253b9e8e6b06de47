"""Per-converter control laws.

Complex-droop (dVOC) reference model, its saturation-informed variant and
the equivalent law for the internal virtual voltage, virtual-admittance
current references, the circular current limiter, the filtered degree of
saturation (DoS) and the fault-ride-through mode switch.

Gains ``eta`` and ``alpha`` are per-unit.  ``eta`` is turned into a rate by
``omega_base`` so that derivatives come out in p.u./s.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, replace

from .core import TWO_PI_50, as_phasor
from .errors import DomainError


class Mode(enum.IntEnum):
    NORMAL = 0
    SATURATED = 1


class Strategy(str, enum.Enum):
    NO_LIMITER = "no-limiter"
    CONVENTIONAL = "conventional-with-limiter"
    SATURATION_INFORMED = "saturation-informed"


@dataclass(frozen=True)
class FrtOverrides:
    """Setpoints and virtual impedance used while SATURATED (all optional)."""

    p_star: float | None = None
    q_star: float | None = None
    z_v: complex | None = None


@dataclass(frozen=True)
class ConverterConfig:
    eta: float = 0.04
    alpha: float = 5.0
    varphi: float = math.pi / 4
    p_star: float = 0.0
    q_star: float = 0.0
    v_star: float = 1.0
    z_v: complex = 0.2
    i_lim: float = 1.1
    tau: float = 0.1
    v_sat: float = 0.9
    frt_overrides: FrtOverrides | None = None
    exit_hysteresis: float = 0.01
    min_dwell: float = 0.01
    omega_base: float = TWO_PI_50
    rating: float = 1.0  # converter rating / network power base

    def __post_init__(self):
        object.__setattr__(self, "z_v", as_phasor(self.z_v))
        if self.eta < 0 or self.alpha < 0:
            raise DomainError("eta and alpha must be nonnegative")
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not self.i_lim > 0:
            raise DomainError("i_lim must be positive")
        if not 0.0 <= self.varphi <= math.pi / 2:
            raise DomainError("varphi must lie in [0, pi/2]")
        if not abs(self.z_v) > 0:
            raise DomainError("|z_v| must be positive")
        if not self.v_star > 0:
            raise DomainError("v_star must be positive")
        if not self.rating > 0:
            raise DomainError("rating must be positive")

    @property
    def setpoint_ratio(self) -> complex:
        """``(p* - j q*) / v*^2``."""
        return complex(self.p_star, -self.q_star) / self.v_star**2

    def saturated_config(self) -> "ConverterConfig":
        """Config with the FRT overrides applied."""
        o = self.frt_overrides
        if o is None:
            return self
        return replace(
            self,
            p_star=self.p_star if o.p_star is None else o.p_star,
            q_star=self.q_star if o.q_star is None else o.q_star,
            z_v=self.z_v if o.z_v is None else o.z_v,
            frt_overrides=None,
        )


@dataclass(frozen=True)
class ConverterState:
    v_hat: complex
    mu_f: float = 1.0
    mode: Mode = Mode.NORMAL
    mode_entry_time: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.mu_f <= 1.0 + 1e-9:
            raise DomainError(f"mu_f must lie in (0, 1], got {self.mu_f}")


def dvoc_derivative(v_hat: complex, i_o: complex, cfg: ConverterConfig, omega_0: float) -> complex:
    """Complex-droop law:

    ``j w0 v + eta e^{j varphi} ((p* - j q*)/v*^2 v - i_o) + eta alpha (v*^2 - |v|^2)/v*^2 v``
    """
    k = cfg.eta * cfg.omega_base
    vs2 = cfg.v_star * cfg.v_star
    amp = (vs2 - (v_hat.real * v_hat.real + v_hat.imag * v_hat.imag)) / vs2
    return (1j * omega_0 * v_hat
            + k * cmath.exp(1j * cfg.varphi) * (cfg.setpoint_ratio * v_hat - i_o)
            + k * cfg.alpha * amp * v_hat)


def saturation_informed_dvoc_derivative(v_hat: complex, i_o: complex, cfg: ConverterConfig,
                                        omega_0: float, mu_f: float) -> complex:
    """dVOC with the current feedback scaled up to ``i_o / mu_f``."""
    if not mu_f > 0:
        raise DomainError("mu_f must be positive")
    return dvoc_derivative(v_hat, i_o / mu_f, cfg, omega_0)


def reference_current(v_hat: complex, v: complex, mu_f: float, cfg: ConverterConfig,
                      mode: Mode) -> complex:
    """Virtual-admittance current reference.

    NORMAL: ``(v_hat - v) / z_v``; SATURATED: ``(v_hat - v / mu_f) / z_v``.
    """
    if mode == Mode.NORMAL:
        return (v_hat - v) / cfg.z_v
    if not mu_f > 0:
        raise DomainError("mu_f must be positive in SATURATED mode")
    return (v_hat - v / mu_f) / cfg.z_v


def circular_limit(i_ref: complex, i_lim: float) -> tuple[complex, float]:
    """Clamp ``|i_ref|`` to ``i_lim`` keeping its phase; return ``(i_bar, mu)``."""
    if not i_lim > 0:
        raise DomainError("i_lim must be positive")
    mag = abs(i_ref)
    if mag <= i_lim:
        return i_ref, 1.0
    mu = i_lim / mag
    return i_ref * mu, mu


def dos_filter_derivative(mu: float, mu_f: float, tau: float) -> float:
    """First-order low-pass ``mu_f = mu / (tau s + 1)``."""
    return (mu - mu_f) / tau


def internal_virtual_voltage(state: ConverterState) -> complex:
    return state.mu_f * state.v_hat


def equivalent_dvoc_derivative(v_hat_mu: complex, i_o: complex, cfg: ConverterConfig,
                               mu_f: float, omega_0: float) -> complex:
    """Law governing ``v_hat_mu = mu_f v_hat`` with the amplitude setpoint
    ``mu_f v*``.  The ``d(mu_f)/dt v_hat`` term is neglected."""
    if not mu_f > 0:
        raise DomainError("mu_f must be positive")
    k = cfg.eta * cfg.omega_base
    vmu2 = (mu_f * cfg.v_star) ** 2
    amp = (vmu2 - abs(v_hat_mu) ** 2) / vmu2
    return (1j * omega_0 * v_hat_mu
            + k * cmath.exp(1j * cfg.varphi) * (cfg.setpoint_ratio * v_hat_mu - i_o)
            + k * cfg.alpha * amp * v_hat_mu)


def mode_transition(state: ConverterState, v_terminal: complex, i_unsat_ref: complex,
                    cfg: ConverterConfig, t: float) -> Mode:
    """Next FRT mode.

    Enter SATURATED as soon as ``|v| < v_sat`` or ``|i_ref| > i_lim``.  Leave
    only when ``mu_f >= 1 - exit_hysteresis``, ``|v| >= v_sat`` and the mode
    has been held for ``min_dwell``.
    """
    if state.mode == Mode.NORMAL:
        if abs(v_terminal) < cfg.v_sat or abs(i_unsat_ref) > cfg.i_lim:
            return Mode.SATURATED
        return Mode.NORMAL
    if (state.mu_f >= 1.0 - cfg.exit_hysteresis
            and abs(v_terminal) >= cfg.v_sat
            and t - state.mode_entry_time >= cfg.min_dwell - 1e-12):
        return Mode.NORMAL
    return Mode.SATURATED
