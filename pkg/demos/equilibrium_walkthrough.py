"""Where does a saturated converter settle?

For the single-converter example we compute the saturated equilibrium two
ways (closed form and general numeric solve), check the residuals of the
steady-state balances, and then sweep the grid voltage to show when the
saturated solution ceases to exist and the converter desaturates.
"""
import numpy as np

from gfmsat.equilibrium import (
    SaturatedEquilibriumProblem,
    closed_form_uniform_tuning,
    desaturation_indicator,
    existence_conditions,
    solve_saturated_equilibrium,
    steady_state_residuals,
)
from gfmsat.scenario import load_scenario

cfg = load_scenario("case1-single").spec.converters[0]
z_g = 0.1 + 0.1j

prob = SaturatedEquilibriumProblem.from_converter(cfg, z_g, v_g=0.3)
closed, numeric = closed_form_uniform_tuning(prob), solve_saturated_equilibrium(prob)
print("grid at 0.3 p.u.")
for name, s in (("closed form", closed), ("numeric", numeric)):
    print(f"  {name:12s} v_hat*mu={s.v_hat_mu_s:.10f}  delta={s.delta_s:+.2e}  mu={s.mu_s:.10f}")
r = steady_state_residuals(prob, closed.v_hat_mu_s, closed.delta_s, closed.mu_s)
print(f"  max residual {max(abs(x) for x in r):.1e}")

print("\nsufficient existence conditions")
for c in existence_conditions(prob):
    print(f"  {c.name:20s} lhs={c.lhs:.4f} rhs={c.rhs:.4f} holds={c.holds}")

print("\ngrid-voltage sweep (indicator >= 0 means the converter leaves saturation)")
for v_g in np.linspace(0.0, 1.0, 11):
    p = SaturatedEquilibriumProblem.from_converter(cfg, z_g, v_g=float(v_g))
    s = solve_saturated_equilibrium(p)
    print(f"  v_g={v_g:.1f}  indicator={desaturation_indicator(p):+8.4f}  mu_s={s.mu_s:.4f}")
