"""Physical constants (CODATA 2018) and species/laser defaults."""

import math

HBAR = 1.054571817e-34  # J s
ELEMENTARY_CHARGE = 1.602176634e-19  # C
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg

CA40_MASS = 39.962590863 * ATOMIC_MASS_UNIT
WAVELENGTH_729 = 729.0e-9  # m, S1/2 - D5/2 quadrupole line
WAVEVECTOR_729 = 2.0 * math.pi / WAVELENGTH_729

TWO_PI = 2.0 * math.pi
