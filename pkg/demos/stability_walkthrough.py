"""Parametric stability conditions for the three case studies.

Each condition compares a worst-case setpoint term against the voltage
support plus a network-strength measure.  The virtual impedance weakens
the apparent network, which the strength-reduction formula predicts
without recomputing eigenvalues.
"""
import cmath

from gfmsat.cli import main
from gfmsat.network import augment_with_virtual_impedance, reduce_to_terminals
from gfmsat.scenario import load_scenario
from gfmsat.stability import gscr, strength_reduction

print("single converter, three variants")
for variant in ("exact", "v_star_relaxed", "no_voltage_info"):
    main(["stability", "--scenario", "case1-single", "--condition", "single", "--variant", variant])

print("\nthree grid-connected converters")
main(["stability", "--scenario", "case2-three-converter", "--condition", "multi"])

print("\nislanded 9-bus microgrid")
main(["stability", "--scenario", "case3-ieee9", "--condition", "microgrid"])

# strength reduction on the pre-fault three-converter network
spec = load_scenario("case2-three-converter").spec
red = reduce_to_terminals(spec.network, spec.terminals, spec.grid_node)
phi = -cmath.phase(red.y_c[0, 0])  # line impedance angle
lam = gscr(red.y_c, phi)
print(f"\ngSCR of the line network at angle {phi:.3f}: {lam:.4f}")
for zmag in (0.05, 0.1, 0.2, 0.4):
    aug = augment_with_virtual_impedance(red.y_c, cmath.rect(zmag, phi))
    print(f"  |z_v|={zmag:.2f}  eigenvalue={gscr(aug, phi):.4f}  formula={strength_reduction(lam, zmag):.4f}")
