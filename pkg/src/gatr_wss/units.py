"""Unit conventions: geometry in mm, flow in ml/s (= cm^3/s), velocity in cm/s,
viscosity in g/(cm s), wall shear stress in Pa."""

MM_PER_CM = 10.0
MM2_PER_CM2 = 100.0
PA_PER_DYN_CM2 = 0.1

VISCOSITY = 0.04  # g / (cm s)
DENSITY = 1.06  # g / cm^3, unused by the Poiseuille oracle
