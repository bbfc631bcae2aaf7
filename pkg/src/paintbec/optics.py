"""Gaussian beam intensity fields and the optical dipole potential.

Every beam carries a local frame ``(paint, perp, axis)``: ``paint`` is the
horizontal direction along which the AOD sweeps the focus, ``axis`` is the
propagation direction and ``perp = axis x paint`` completes the right-handed
set (vertical for horizontal beams). ``waist_x`` is measured along ``paint``
and ``waist_y`` along ``perp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .constants import PhysicalConstants


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Beam:
    """A focused, astigmatism-free Gaussian beam (M^2 = 1)."""

    power: float
    waist_x: float
    waist_y: float
    wavelength: float = 1064e-9
    axis: tuple = (1.0, 0.0, 0.0)
    paint_axis: tuple = (0.0, 1.0, 0.0)
    focus: tuple = (0.0, 0.0, 0.0)
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("beam power must be >= 0")
        if self.waist_x <= 0 or self.waist_y <= 0:
            raise ValueError("beam waists must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        a = np.asarray(self.axis, dtype=float)
        p = np.asarray(self.paint_axis, dtype=float)
        if a.shape != (3,) or p.shape != (3,) or np.asarray(self.focus).shape != (3,):
            raise ValueError("axis, paint_axis and focus must be 3-vectors")
        if abs(np.linalg.norm(a) - 1) > 1e-9 or abs(np.linalg.norm(p) - 1) > 1e-9:
            raise ValueError("axis and paint_axis must be unit vectors")
        if abs(a @ p) > 1e-9:
            raise ValueError("paint_axis must be orthogonal to the propagation axis")

    @property
    def rayleigh_x(self):
        return np.pi * self.waist_x**2 / self.wavelength

    @property
    def rayleigh_y(self):
        return np.pi * self.waist_y**2 / self.wavelength

    @property
    def rayleigh_range(self):
        return max(self.rayleigh_x, self.rayleigh_y)

    @property
    def peak_intensity(self):
        return 2 * self.power / (np.pi * self.waist_x * self.waist_y)

    @cached_property
    def frame(self):
        """Rows: paint axis, perpendicular (axis x paint), propagation axis."""
        a = np.asarray(self.axis, dtype=float)
        p = np.asarray(self.paint_axis, dtype=float)
        return np.array([p, np.cross(a, p), a])

    @property
    def perp_axis(self):
        return self.frame[1]

    def with_power(self, power):
        return replace(self, power=float(power))

    def local_coordinates(self, points):
        """Project ``points`` (..., 3) onto (paint, perp, axis) about the focus."""
        r = np.asarray(points, dtype=float) - np.asarray(self.focus, dtype=float)
        local = r @ self.frame.T
        return local[..., 0], local[..., 1], local[..., 2]

    def waists_at(self, z):
        wx = self.waist_x * np.hypot(1.0, z / self.rayleigh_x)
        wy = self.waist_y * np.hypot(1.0, z / self.rayleigh_y)
        return wx, wy


def gaussian_intensity(beam: Beam, points) -> np.ndarray:
    """Intensity (W/m^2) of a static beam at ``points`` (..., 3)."""
    p, q, z = beam.local_coordinates(points)
    wx, wy = beam.waists_at(z)
    return 2 * beam.power / (np.pi * wx * wy) * np.exp(-2 * p**2 / wx**2 - 2 * q**2 / wy**2)


def dipole_potential(intensity, constants: PhysicalConstants):
    """Optical dipole potential energy (J); linear in intensity."""
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ValueError("intensity must be non-negative")
    return constants.c_dip * intensity
