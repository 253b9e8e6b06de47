"""Reference values computed once with the routines in ``oracles.py`` and
frozen here.  Each test checks both the oracle and the package against them,
so a drift in either route shows up."""

# single converter on 0.1+0.1j, z_v = 0.2 at 45 degrees, i_lim 1.1, alpha 5
Z_TOTAL_MAG = 0.34142135623730950
FAULT_V_HAT_MU = 0.6755634918610405  # v_g = 0.3
MU_S_ZERO_SETPOINT = 0.8226683724881994  # A = B = 0
MU_S_CASE1 = 0.7901924774156853  # p = q = 0.2 -> A = 0.2828..., B = 0
ROTATED_CASE1 = (0.282842712474619, 0.0)

LAMBDA_EXSAT_ZERO = {1.0: 5.260546885196467, 0.3: -1.0897994972663119}
LAMBDA_EXSAT_CASE1 = {1.0: 4.9777041727218485, 0.3: -1.3726422097409308}

AUGMENTED_SCALAR = complex(2.071067811865475, -2.071067811865475)

# v_hat = 0.85 at 0.3 rad, mu_f = 0.8, v_g = 0.3
LIMITED_CURRENT_INFORMED = complex(1.061963358758583, -0.28676440618422144)
LIMITED_CURRENT_CONVENTIONAL = complex(1.040889157423457, -0.35573833355190443)

# dvoc at v_hat = 0.9+0.2j, i_o = 0.3-0.1j, p 0.2, q 0.4, omega_0 = 0
DVOC_SAMPLE = complex(10.081738022429448, -0.4253435356884756)
