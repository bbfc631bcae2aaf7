"""Physical constants for rubidium-87 in a 1064 nm dipole trap.

CODATA values come from :mod:`scipy.constants`; atom-specific numbers are
collected in :class:`PhysicalConstants` so a different species or trapping
wavelength can be swapped in through the run config.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import constants as sc

KB = sc.k
HBAR = sc.hbar
MU_B = sc.physical_constants["Bohr magneton"][0]
A0 = sc.physical_constants["Bohr radius"][0]
AMU = sc.atomic_mass

RB87_MASS = 86.909180527 * AMU
RB87_SCATTERING_LENGTH = 100.4 * A0

# (wavelength [m], natural linewidth [rad/s], relative line strength)
RB87_D_LINES = (
    (780.241209686e-9, 2 * np.pi * 6.0666e6, 2.0 / 3.0),
    (794.978851156e-9, 2 * np.pi * 5.7500e6, 1.0 / 3.0),
)


def far_detuned_dipole_coefficient(wavelength, lines=RB87_D_LINES):
    """Potential per unit intensity for a far-detuned, linearly polarised beam.

    Sums the D1/D2 contributions including the counter-rotating terms,
    ``U/I = -sum_j s_j (3 pi c^2 / 2 w_j^3) Gamma_j (1/(w_j - w) + 1/(w_j + w))``.

    Returns J per (W/m^2); negative for red detuning.
    """
    omega = 2 * np.pi * sc.c / wavelength
    total = 0.0
    for line_wavelength, gamma, strength in lines:
        omega0 = 2 * np.pi * sc.c / line_wavelength
        total -= (
            strength
            * 3 * np.pi * sc.c**2 / (2 * omega0**3)
            * gamma * (1 / (omega0 - omega) + 1 / (omega0 + omega))
        )
    return total


# Frozen evaluation of far_detuned_dipole_coefficient(1064e-9).
RB87_C_DIP_1064 = -2.1034303249678663e-36


@dataclass(frozen=True)
class PhysicalConstants:
    mass: float = RB87_MASS
    scattering_length: float = RB87_SCATTERING_LENGTH
    c_dip: float = RB87_C_DIP_1064
    g_F: float = -0.5
    gravity: float = sc.g
    k_B: float = KB
    hbar: float = HBAR
    mu_B: float = MU_B

    def __post_init__(self):
        for name in ("mass", "scattering_length", "k_B", "hbar", "gravity", "mu_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.c_dip < 0:
            raise ValueError("c_dip must be negative (red-detuned trap)")

    @property
    def cross_section(self):
        """s-wave cross-section for identical bosons, 8 pi a^2."""
        return 8 * np.pi * self.scattering_length**2

    def with_(self, **changes):
        return replace(self, **changes)


RB87 = PhysicalConstants()
