"""Internal unit system: Angstrom, eV, femtosecond, amu, Kelvin.

Masses are converted once, on entry into the dynamics, to "dynamical"
units of eV*fs^2/A^2 so that F = m*a and E_kin = 0.5*m*v^2 hold without
further factors. CODATA 2018 constants.
"""

# Boltzmann constant, eV/K
KB = 8.617333262145179e-05

# 1 amu * (A/fs)^2 expressed in eV; multiply an amu mass by this to get
# a mass in eV*fs^2/A^2.
AMU_TO_DYN = 103.64269667160806

# 1 eV/A^3 expressed in bar
EV_PER_A3_TO_BAR = 1.602176634e6

# sqrt(eV / (amu * A^2)) expressed as an ordinary frequency in THz
SQRT_EV_AMU_A2_TO_THZ = 15.63330422893526

# handy length conversions (file interfaces occasionally quote nm)
NM_TO_A = 10.0
PS_TO_FS = 1000.0


def dynamical_mass(mass_amu: float) -> float:
    """Mass in eV*fs^2/A^2 from a mass in amu."""
    return mass_amu * AMU_TO_DYN
