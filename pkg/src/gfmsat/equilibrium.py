"""Current-saturated steady state of a grid-connected saturation-informed
converter, its closed form under uniform-angle tuning, existence conditions
and the desaturation indicator.

Unknowns are the internal virtual voltage magnitude ``v`` (``|mu_f v_hat|``),
its angle ``delta`` against the grid and the steady DoS ``mu``.  With
``A + jB = exp(j varphi) (p* - j q*)/v*^2`` (``A = rho_phi``, ``B = sigma_phi``
in :class:`~gfmsat.core.RotatedSetpoint`), ``y = 1/z``, ``z = z_g + z_v`` and
``phi = angle(z) - varphi``, the balance equations are::

    A + alpha - alpha v^2/(mu^2 v*^2) = |y| cos(phi) - v_g |y| cos(delta + phi)/v
    B + w_delta/eta                   = -|y| sin(phi) + v_g |y| sin(delta + phi)/v
    cos(delta) = (v^2 + v_g^2 - i_lim^2 |z|^2) / (2 v v_g)

The real part ``A`` enters the amplitude balance and ``B`` the angle balance,
which is what the dVOC dynamics produce when split along and across
``v_hat``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .control import ConverterConfig
from .core import TWO_PI_50, RotatedSetpoint, as_phasor, rotated_setpoint
from .errors import ApplicabilityError, DomainError


@dataclass(frozen=True)
class SaturatedEquilibriumProblem:
    setpoint: RotatedSetpoint
    alpha: float
    eta: float
    v_star: float
    i_lim: float
    z_v: complex
    z_g: complex
    varphi: float
    v_g: float
    omega_delta: float = 0.0
    omega_base: float = TWO_PI_50

    def __post_init__(self):
        object.__setattr__(self, "z_v", as_phasor(self.z_v))
        object.__setattr__(self, "z_g", as_phasor(self.z_g))
        if abs(self.z_total) == 0:
            raise DomainError("|z_g + z_v| must be positive")
        if self.v_g < 0 or not self.i_lim > 0 or not self.v_star > 0:
            raise DomainError("need v_g >= 0, i_lim > 0, v_star > 0")

    @classmethod
    def from_converter(cls, cfg: ConverterConfig, z_g: complex, v_g: float,
                       omega_delta: float = 0.0) -> "SaturatedEquilibriumProblem":
        """Problem for ``cfg`` in SATURATED mode (FRT overrides applied)."""
        sat = cfg.saturated_config()
        sp = rotated_setpoint(sat.p_star, sat.q_star, sat.v_star, sat.varphi)
        return cls(sp, sat.alpha, sat.eta, sat.v_star, sat.i_lim, sat.z_v, z_g,
                   sat.varphi, v_g, omega_delta, sat.omega_base)

    @property
    def z_total(self) -> complex:
        return self.z_g + self.z_v

    @property
    def y(self) -> complex:
        return 1.0 / self.z_total

    @property
    def phi(self) -> float:
        """Rotated impedance angle ``angle(z) - varphi``."""
        return math.atan2(self.z_total.imag, self.z_total.real) - self.varphi

    @property
    def amplitude_term(self) -> float:
        return self.setpoint.rho_phi

    @property
    def angle_term(self) -> float:
        if self.omega_delta == 0.0:
            return self.setpoint.sigma_phi
        if self.eta == 0.0:
            return math.copysign(math.inf, self.omega_delta)
        return self.setpoint.sigma_phi + self.omega_delta / (self.eta * self.omega_base)


@dataclass(frozen=True)
class EquilibriumSolution:
    v_hat_mu_s: float
    delta_s: float
    mu_s: float
    residual: float
    exists: bool
    desaturating: bool
    lambda_exsat: float
    root_count: int = 0
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "v_hat_mu_s": self.v_hat_mu_s,
            "delta_s": self.delta_s,
            "mu_s": self.mu_s,
            "residual": self.residual,
            "exists": self.exists,
            "desaturating": self.desaturating,
            "lambda_exsat": self.lambda_exsat,
            "root_count": self.root_count,
            "diagnostic": self.diagnostic,
        }


def steady_state_residuals(problem: SaturatedEquilibriumProblem, v: float, delta: float,
                           mu: float) -> tuple[float, float, float]:
    """Left-hand side minus right-hand side of the three balance equations."""
    p = problem
    ay, phi, vg = abs(p.y), p.phi, p.v_g
    r1 = (p.amplitude_term + p.alpha - p.alpha * v * v / (mu * mu * p.v_star**2)
          - (ay * math.cos(phi) - vg * ay * math.cos(delta + phi) / v))
    r2 = p.angle_term - (-ay * math.sin(phi) + vg * ay * math.sin(delta + phi) / v)
    rad = p.i_lim * abs(p.z_total)
    if vg > 0:
        r3 = math.cos(delta) - (v * v + vg * vg - rad * rad) / (2 * v * vg)
    else:
        r3 = v - rad
    return r1, r2, r3


def _mu_from_amplitude(p: SaturatedEquilibriumProblem, v: float, delta: float) -> float | None:
    ay = abs(p.y)
    denom = p.amplitude_term + p.alpha - ay * math.cos(p.phi) + p.v_g * ay * math.cos(delta + p.phi) / v
    if not (p.alpha > 0 and denom > 0):
        return None
    return math.sqrt(p.alpha * v * v / (p.v_star**2 * denom))


def _finish(p: SaturatedEquilibriumProblem, v: float, delta: float, roots: int,
            tol: float, note: str = "") -> EquilibriumSolution:
    lam = desaturation_indicator(p) if _uniform_tuning_applicable(p) else math.nan
    mu = _mu_from_amplitude(p, v, delta)
    if mu is None:
        r2, r3 = steady_state_residuals(p, v, delta, 1.0)[1:]
        return EquilibriumSolution(float(v), float(delta), math.nan, float(max(abs(r2), abs(r3))), False,
                                   bool(lam >= 0) if not math.isnan(lam) else False, lam,
                                   roots, note or "mu_s^2 <= 0: amplitude balance has no positive solution")
    res = float(max(abs(r) for r in steady_state_residuals(p, v, delta, mu)))
    desat = bool(lam >= 0) if not math.isnan(lam) else bool(mu >= 1.0)
    ok = bool(res <= tol)
    return EquilibriumSolution(float(v), float(delta), float(mu), res, ok, desat, lam, roots,
                               note if ok else f"residual {res:.3e} above tolerance")


def _polish(p: SaturatedEquilibriumProblem, v: float, delta: float, iters: int = 30):
    """Newton on the angle balance and the cosine law in ``(v, delta)``."""
    ay, phi, vg = abs(p.y), p.phi, p.v_g
    rad = p.i_lim * abs(p.z_total)
    C = p.angle_term + ay * math.sin(phi)
    for _ in range(iters):
        s, c = math.sin(delta + phi), math.cos(delta + phi)
        f1 = C - vg * ay * s / v
        f2 = v * v + vg * vg - 2 * v * vg * math.cos(delta) - rad * rad
        if abs(f1) < 1e-15 and abs(f2) < 1e-15:
            break
        J = np.array([[vg * ay * s / (v * v), -vg * ay * c / v],
                      [2 * v - 2 * vg * math.cos(delta), 2 * v * vg * math.sin(delta)]])
        try:
            dv, dd = np.linalg.solve(J, [f1, f2])
        except np.linalg.LinAlgError:
            break
        if not (math.isfinite(dv) and math.isfinite(dd)):
            break
        v, delta = v - dv, delta - dd
        if abs(dv) < 1e-16 and abs(dd) < 1e-16:
            break
    return float(v), math.remainder(float(delta), 2 * math.pi)


def solve_saturated_equilibrium(problem: SaturatedEquilibriumProblem, tol: float = 1e-10,
                                n_scan: int = 2000) -> EquilibriumSolution:
    """Solve the three balance equations.

    The cosine law gives ``delta(v)`` on two branches (``+-acos``); the angle
    balance is then a scalar function of ``v`` on the bracket
    ``[|v_g - r|, v_g + r]`` with ``r = i_lim |z|``.  Each branch is scanned,
    sign changes are refined with Brent's method and polished by Newton, and
    ``mu`` follows from the amplitude balance.  With several roots the one
    with the largest ``v`` is returned.
    """
    p = problem
    ay, phi, vg = abs(p.y), p.phi, p.v_g
    rad = p.i_lim * abs(p.z_total)
    C = p.angle_term
    if not math.isfinite(C):
        return EquilibriumSolution(math.nan, math.nan, math.nan, math.inf, False, False,
                                   math.nan, 0, "eta = 0 with off-nominal grid frequency")
    if vg == 0.0:
        # angle unobservable; delta = 0 by convention
        f = C + ay * math.sin(phi)
        if abs(f) > tol:
            return EquilibriumSolution(rad, 0.0, math.nan, abs(f), False, False, math.nan, 0,
                                       "bolted grid: angle balance cannot hold")
        return _finish(p, rad, 0.0, 1, tol, "v_g = 0: delta_s set to 0 by convention")

    lo, hi = abs(vg - rad), vg + rad
    if lo == 0.0:
        lo = 1e-9 * hi
    scale = 1.0 + abs(C) + ay

    def branch(v, sgn):
        g = (v * v + vg * vg - rad * rad) / (2 * v * vg)
        return sgn * math.acos(min(1.0, max(-1.0, g)))

    def f(v, sgn):
        return C + ay * math.sin(phi) - vg * ay * math.sin(branch(v, sgn) + phi) / v

    k = np.arange(n_scan + 1)
    grid = lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * k / n_scan))
    candidates = []
    ztol = 1e-12 * scale
    # acos loses half the digits next to +-1, so the bracket ends are
    # evaluated with their exact angles
    ends = [(hi, 0.0), (abs(vg - rad), 0.0 if vg >= rad else math.pi)]
    for v_end, d_end in ends:
        if v_end > 0:
            f_end = C + ay * math.sin(phi) - vg * ay * math.sin(d_end + phi) / v_end
            if abs(f_end) <= 1e-10 * scale:
                candidates.append((v_end, d_end))
    for sgn in (1.0, -1.0):
        vals = [f(v, sgn) for v in grid]
        for j in range(n_scan + 1):
            if abs(vals[j]) <= ztol:
                candidates.append((grid[j], branch(grid[j], sgn)))
            elif j < n_scan and vals[j] * vals[j + 1] < 0 and abs(vals[j + 1]) > ztol:
                v0 = brentq(f, grid[j], grid[j + 1], args=(sgn,), xtol=1e-15, rtol=4 * np.finfo(float).eps)
                candidates.append((v0, branch(v0, sgn)))
    roots = []
    for v0, d0 in candidates:
        v1, d1 = _polish(p, v0, d0)
        if not (lo * (1 - 1e-9) <= v1 <= hi * (1 + 1e-9)):
            v1, d1 = v0, d0
        if all(abs(v1 - r[0]) > 1e-8 or abs(math.remainder(d1 - r[1], 2 * math.pi)) > 1e-8 for r in roots):
            roots.append((v1, d1))
    if not roots:
        return EquilibriumSolution(math.nan, math.nan, math.nan, math.inf, False, False,
                                   desaturation_indicator(p) if _uniform_tuning_applicable(p) else math.nan,
                                   0, "no real root of the angle balance in the admissible bracket")
    v_s, d_s = max(roots, key=lambda r: r[0])
    return _finish(p, v_s, d_s, len(roots), tol)


def _wrap(a: float) -> float:
    return math.remainder(a, 2 * math.pi)


def _angle(z: complex) -> float:
    return math.atan2(z.imag, z.real)


def _uniform_tuning_applicable(p: SaturatedEquilibriumProblem, tol: float = 1e-9) -> bool:
    if abs(_wrap(_angle(p.z_v) - p.varphi)) > tol:
        return False
    if p.z_g != 0 and abs(_wrap(_angle(p.z_g) - p.varphi)) > tol:
        return False
    return p.omega_delta == 0.0 and abs(p.setpoint.sigma_phi) <= tol


def closed_form_uniform_tuning(problem: SaturatedEquilibriumProblem) -> EquilibriumSolution:
    """Uniform impedance angle, zero angle-balance setpoint, nominal frequency:
    ``delta = 0`` and ``v = v_g + i_lim |z|``."""
    p = problem
    if not _uniform_tuning_applicable(p):
        raise ApplicabilityError("closed form needs angle(z_v) = angle(z_g) = varphi, "
                                 "zero imaginary rotated setpoint and omega_delta = 0")
    v = p.v_g + p.i_lim * abs(p.z_total)
    lam = desaturation_indicator(p)
    denom = p.amplitude_term + p.alpha - p.i_lim / v
    if not (p.alpha > 0 and denom > 0):
        return EquilibriumSolution(v, 0.0, math.nan, math.nan, False, bool(lam >= 0), lam, 0,
                                   "mu_s^2 <= 0")
    mu = math.sqrt(p.alpha * v * v / (p.v_star**2 * denom))
    res = max(abs(r) for r in steady_state_residuals(p, v, 0.0, mu))
    return EquilibriumSolution(v, 0.0, mu, float(res), True, bool(lam >= 0), lam, 1)


@dataclass(frozen=True)
class ExistenceCondition:
    name: str
    lhs: float
    rhs: float
    holds: bool | None
    requires: tuple[str, ...] = field(default=())


def existence_conditions(problem: SaturatedEquilibriumProblem,
                         z_g_known: bool = True) -> list[ExistenceCondition]:
    """Sufficient conditions for a saturated equilibrium with ``mu_s > 0``.

    Ordered from most to least informed: grid voltage and impedance, grid
    impedance only, local virtual impedance only.  With ``z_g_known=False``
    the first two are reported with ``holds=None``.
    """
    p = problem
    if not _uniform_tuning_applicable(p):
        raise ApplicabilityError("existence conditions assume the uniform-angle tuning")
    gain = p.amplitude_term + p.alpha
    zg, zv = abs(p.z_g), abs(p.z_v)
    grid_rhs = p.i_lim / (p.v_g + p.i_lim * (zg + zv))
    out = [
        ExistenceCondition("grid-informed", gain, grid_rhs,
                           (gain > grid_rhs) if z_g_known else None,
                           ("grid voltage", "grid impedance")),
        ExistenceCondition("impedance-informed", gain * (zg + zv), 1.0,
                           (gain * (zg + zv) > 1.0) if z_g_known else None,
                           ("grid impedance",)),
        ExistenceCondition("local", gain * zv, 1.0, gain * zv >= 1.0, ()),
    ]
    return out


def desaturation_indicator(problem: SaturatedEquilibriumProblem) -> float:
    """``alpha (v_g + i_lim|z|)^2/v*^2 + i_lim/(v_g + i_lim|z|) - A - alpha``;
    nonnegative means the saturated solution has ``mu_s >= 1``."""
    p = problem
    v = p.v_g + p.i_lim * abs(p.z_total)
    return p.alpha * v * v / p.v_star**2 + p.i_lim / v - p.amplitude_term - p.alpha
