"""Parametric transient-stability conditions under current saturation and the
network-strength measures they use (gSCR and algebraic connectivity)."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RotatedSetpoint
from .errors import DomainError, GfmSatError

VARIANTS = ("exact", "v_star_relaxed", "no_voltage_info")


@dataclass(frozen=True)
class StabilityReport:
    condition_kind: str  # single-grid | multi-grid | microgrid
    lhs: float
    rhs: float
    satisfied: bool
    margin: float
    network_strength: float
    variant: str

    def to_dict(self) -> dict:
        return {
            "condition_kind": self.condition_kind,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "satisfied": self.satisfied,
            "margin": self.margin,
            "network_strength": self.network_strength,
            "variant": self.variant,
        }


def _report(kind, lhs, rhs, strength, variant) -> StabilityReport:
    lhs, rhs = float(lhs), float(rhs)
    return StabilityReport(kind, lhs, rhs, lhs < rhs, rhs - lhs, float(strength), variant)


def rotated_real_part(Y: np.ndarray, varphi: float) -> np.ndarray:
    """Symmetrized entrywise real part of ``exp(j varphi) Y``."""
    M = np.real(cmath.exp(1j * varphi) * np.atleast_2d(np.asarray(Y, dtype=complex)))
    return 0.5 * (M + M.T)


def _eigvals(Y, varphi) -> np.ndarray:
    w = np.linalg.eigvalsh(rotated_real_part(Y, varphi))
    if not np.all(np.isfinite(w)):
        raise GfmSatError("non-finite eigenvalues")
    return w


def gscr(Y_c_aug: np.ndarray, varphi: float) -> float:
    """Generalized short-circuit ratio ``lambda_min(Re{exp(j varphi) Y_c})``."""
    return float(_eigvals(Y_c_aug, varphi)[0])


def algebraic_connectivity(Y_m_aug: np.ndarray, varphi: float) -> float:
    """Second-smallest eigenvalue of ``Re{exp(j varphi) Y_m}``."""
    w = _eigvals(Y_m_aug, varphi)
    if w.size < 2:
        raise DomainError("algebraic connectivity needs at least two nodes")
    return float(w[1])


def _voltage_term(alpha, v_hat_mu_s, v_ref, variant):
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}")
    if variant == "no_voltage_info":
        return 0.0
    return 0.5 * alpha * v_hat_mu_s**2 / v_ref**2


def check_single(setpoint: RotatedSetpoint, alpha: float, v_hat_mu_s: float, v_mu_star: float,
                 y: complex, varphi: float, variant: str = "exact",
                 v_star: float | None = None) -> StabilityReport:
    """Single converter behind ``y = 1/(z_g + z_v)``.

    ``Re{e^{j varphi} (p*-jq*)/v*^2} + alpha < alpha/2 v_mu_s^2/v_mu*^2 + Re{e^{j varphi} y}``.
    ``v_star_relaxed`` uses ``v_star`` in place of ``v_mu_star``; ``no_voltage_info``
    drops the voltage term.
    """
    lhs = setpoint.rho_phi + alpha
    # same arithmetic path as the multi-converter check, so n = 1 agrees exactly
    strength = float(rotated_real_part(np.array([[y]], dtype=complex), varphi)[0, 0])
    v_ref = v_mu_star if variant == "exact" else (v_star if v_star is not None else v_mu_star)
    if variant == "v_star_relaxed" and v_star is None:
        raise DomainError("v_star_relaxed needs v_star")
    rhs = _voltage_term(alpha, v_hat_mu_s, v_ref, variant) + strength
    return _report("single-grid", lhs, rhs, strength, variant)


def _worst_lhs(setpoints: Sequence[RotatedSetpoint], alpha) -> tuple[float, float]:
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (len(setpoints),))
    lhs = max(sp.rho_phi + ak for sp, ak in zip(setpoints, a))
    return float(lhs), float(a.min())


def check_multi_grid(setpoints: Sequence[RotatedSetpoint], alpha, v_hat_mu_s_min: float,
                     v_mu_star_max: float, Y_c_aug: np.ndarray, varphi: float,
                     variant: str = "exact") -> StabilityReport:
    """Decentralized condition for ``n`` grid-connected converters:
    worst converter against ``alpha/2 v_min^2/v*_max^2 + gSCR``."""
    Y_c_aug = np.atleast_2d(Y_c_aug)
    if Y_c_aug.shape[0] != len(setpoints):
        raise DomainError("one setpoint per converter required")
    lhs, a_min = _worst_lhs(setpoints, alpha)
    strength = gscr(Y_c_aug, varphi)
    rhs = _voltage_term(a_min, v_hat_mu_s_min, v_mu_star_max, variant) + strength
    return _report("multi-grid", lhs, rhs, strength, variant)


def microgrid_prefactor(delta_bar: float, mu_bar: float) -> float:
    """``(1 + cos delta_bar)(1 - mu_bar)^2 / 2``."""
    if not 0.0 <= delta_bar < math.pi / 2:
        raise DomainError("delta_bar must lie in [0, pi/2)")
    if not 0.0 < mu_bar < 1.0:
        raise DomainError("mu_bar must lie in (0, 1)")
    return (1.0 + math.cos(delta_bar)) * (1.0 - mu_bar) ** 2 / 2.0


def check_microgrid(setpoints: Sequence[RotatedSetpoint], alpha, delta_bar: float,
                    mu_bar: float, Y_m_aug: np.ndarray, varphi: float) -> StabilityReport:
    lhs, _ = _worst_lhs(setpoints, alpha)
    strength = algebraic_connectivity(Y_m_aug, varphi)
    rhs = microgrid_prefactor(delta_bar, mu_bar) * strength
    return _report("microgrid", lhs, rhs, strength, "exact")


def strength_reduction(lambda_orig: float, z_v_mag: float) -> float:
    """Strength of the virtual-impedance augmented network from the original
    one, valid for uniform impedance angles: ``lambda / (1 + lambda |z_v|)``."""
    if lambda_orig < 0 or z_v_mag < 0:
        raise DomainError("lambda_orig and |z_v| must be nonnegative")
    return lambda_orig / (1.0 + lambda_orig * z_v_mag)
