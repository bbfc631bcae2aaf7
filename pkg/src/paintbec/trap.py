"""Crossed painted-beam trap: total potential, minimum, frequencies, depths.

The vertical direction is +z. Gravity adds ``m g z`` and the spin-distillation
gradient adds ``|m_F g_F| mu_B B' z`` (linear-gradient magnitude model), so the
m_F = +-1 states are pulled downward out of the trap while m_F = 0 is unaffected.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import IntEnum

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .constants import RB87, PhysicalConstants
from .optics import Beam
from .painting import time_averaged_intensity

VERTICAL = np.array([0.0, 0.0, 1.0])

_LENGTH = 1e-6  # optimiser length unit
_SQRT_2_PI = math.sqrt(2 / math.pi)


class SpinState(IntEnum):
    MINUS = -1
    ZERO = 0
    PLUS = 1


class TrapError(RuntimeError):
    """Trap characterization failed; ``point`` is the best point found, if any."""

    def __init__(self, message, point=None, time=None):
        super().__init__(message)
        self.point = point
        self.time = time


class UntrappedError(TrapError):
    """No bounded minimum: the potential spills along gravity."""


class SaddleError(TrapError):
    """The stationary point has a non-trapping direction."""


@dataclass(frozen=True)
class PaintedBeam:
    beam: Beam
    dwell: object  # UniformDwell, ParabolicDwell or DwellDensity

    @property
    def half_width(self):
        return self.dwell.stroke + max(self.beam.waist_x, self.beam.waist_y)

    @cached_property
    def _scalar_terms(self):
        b = self.beam
        frame = tuple(tuple(float(v) for v in row) for row in b.frame)
        return (frame, tuple(map(float, b.focus)), float(b.power), float(b.waist_x),
                float(b.waist_y), float(b.rayleigh_x), float(b.rayleigh_y))

    def intensity_at(self, x, y, z):
        """Scalar twin of ``time_averaged_intensity`` for one point."""
        (fp, fq, fa), (cx, cy, cz), P, wx0, wy0, zx, zy = self._scalar_terms
        rx, ry, rz = x - cx, y - cy, z - cz
        p = fp[0] * rx + fp[1] * ry + fp[2] * rz
        q = fq[0] * rx + fq[1] * ry + fq[2] * rz
        a = fa[0] * rx + fa[1] * ry + fa[2] * rz
        wx = wx0 * math.hypot(1.0, a / zx)
        wy = wy0 * math.hypot(1.0, a / zy)
        if not (wx < math.inf and wy < math.inf) or abs(q) > 40 * wy:
            return 0.0
        return (P * _SQRT_2_PI / wy * math.exp(-2 * q * q / (wy * wy))
                * self.dwell.smooth_scalar(p, wx / 2))


@dataclass(frozen=True)
class TrapConfig:
    beams: tuple
    gradient: float = 0.0
    gravity: bool = True
    constants: PhysicalConstants = RB87

    def __post_init__(self):
        if len(self.beams) != 2:
            raise ValueError("trap needs exactly two painted beams")
        if self.gradient < 0:
            raise ValueError("gradient must be >= 0")

    @property
    def escape_range(self):
        """Ray length for depth searches: 20x the largest painted or axial scale."""
        scale = max(max(pb.half_width, pb.beam.rayleigh_range) for pb in self.beams)
        return 20 * scale

    @property
    def hessian_step(self):
        lit = [pb.beam for pb in self.beams if pb.beam.power > 0] or [pb.beam for pb in self.beams]
        w_min = min(min(b.waist_x, b.waist_y) for b in lit)
        return max(50e-9, w_min / 200)


@dataclass
class TrapCharacterization:
    minimum: np.ndarray
    frequencies: tuple
    depths: dict
    axes: np.ndarray = field(repr=False, default=None)

    @property
    def mean_omega(self):
        fx, fy, fz = self.frequencies
        return 2 * np.pi * float(np.cbrt(fx * fy * fz))

    def depth(self, spin):
        return self.depths[int(spin)]


def optical_potential(cfg: TrapConfig, points):
    points = np.asarray(points, dtype=float)
    total = np.zeros(points.shape[:-1])
    for pb in cfg.beams:
        if pb.beam.power > 0:
            total = total + time_averaged_intensity(pb.beam, pb.dwell, points)
    return cfg.constants.c_dip * total


def magnetic_acceleration(cfg: TrapConfig, spin=SpinState.PLUS):
    c = cfg.constants
    return abs(int(spin) * c.g_F) * c.mu_B * cfg.gradient / c.mass


def total_potential(cfg: TrapConfig, points, spin=SpinState.ZERO):
    """Total potential energy (J) at ``points`` (..., 3) for Zeeman state ``spin``."""
    points = np.asarray(points, dtype=float)
    c = cfg.constants
    z = points[..., 2]
    slope = abs(int(spin) * c.g_F) * c.mu_B * cfg.gradient
    if cfg.gravity:
        slope = slope + c.mass * c.gravity
    return optical_potential(cfg, points) + slope * z


def potential_at(cfg: TrapConfig, point, spin=SpinState.ZERO):
    """Scalar potential at a single point; same value as ``total_potential``."""
    if not all(hasattr(pb.dwell, "smooth_scalar") for pb in cfg.beams):
        return float(total_potential(cfg, point, spin))
    x, y, z = (float(v) for v in point)
    intensity = 0.0
    for pb in cfg.beams:
        if pb.beam.power > 0:
            intensity += pb.intensity_at(x, y, z)
    c = cfg.constants
    slope = abs(int(spin) * c.g_F) * c.mu_B * cfg.gradient
    if cfg.gravity:
        slope += c.mass * c.gravity
    return c.c_dip * intensity + slope * z


def _gradient(cfg, spin, point, h):
    offsets = np.concatenate([np.eye(3), -np.eye(3)]) * h
    u = total_potential(cfg, point + offsets, spin)
    return (u[:3] - u[3:]) / (2 * h)


def find_minimum(cfg: TrapConfig, spin=SpinState.ZERO, seed=None, max_iters=4000, grad_tol=0.05,
                 restarts=2):
    """Local minimum by Nelder-Mead, converged to a 10 nm simplex.

    ``grad_tol`` bounds the residual force at the result in units of the
    atom's weight ``m g``. A simplex that collapses away from the minimum (this
    happens in shallow, strongly anisotropic traps) is restarted from its
    best vertex up to ``restarts`` times before a Newton polish.
    """
    seed = np.zeros(3) if seed is None else np.asarray(seed, dtype=float)
    energy = cfg.constants.k_B * 1e-6
    ref = abs(optical_potential(cfg, seed))
    if ref == 0:
        raise UntrappedError("no optical potential at the seed point", seed)

    def f(u):
        return potential_at(cfg, seed + u * _LENGTH, spin) / energy

    w_min = min(min(pb.beam.waist_x, pb.beam.waist_y) for pb in cfg.beams)
    step = 0.5 * w_min / _LENGTH
    weight = cfg.constants.mass * cfg.constants.gravity
    u = np.zeros(3)
    for _ in range(restarts + 1):
        simplex = np.vstack([u, u + np.eye(3) * step])
        with np.errstate(over="ignore", invalid="ignore"):  # a spilling search runs off to infinity
            res = minimize(f, u, method="Nelder-Mead",
                           options={"initial_simplex": simplex, "xatol": 0.01, "fatol": np.inf,
                                    "maxiter": max_iters, "maxfev": 2 * max_iters})
        u = res.x
        point = seed + u * _LENGTH
        with np.errstate(over="ignore", invalid="ignore"):
            opt_here = abs(optical_potential(cfg, point))
        if not np.all(np.isfinite(point)):
            raise UntrappedError("atoms spill: no bounded minimum", point)
        if np.linalg.norm(point - seed) > cfg.escape_range or opt_here < 1e-6 * ref:
            raise UntrappedError("atoms spill: no bounded minimum", point)
        if not res.success:
            raise TrapError(f"minimum search did not converge: {res.message}", point)
        force = np.linalg.norm(_gradient(cfg, spin, point, cfg.hessian_step))
        if force <= grad_tol * weight:
            return point
    point = _newton_polish(cfg, spin, point)
    force = np.linalg.norm(_gradient(cfg, spin, point, cfg.hessian_step))
    if force > grad_tol * weight:
        raise TrapError("residual force at minimum above tolerance", point)
    return point


def _newton_polish(cfg, spin, point, steps=3):
    h = cfg.hessian_step
    for _ in range(steps):
        H = hessian(cfg, spin, point)
        try:
            delta = np.linalg.solve(H, _gradient(cfg, spin, point, h))
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(delta) > 10 * h:
            break
        point = point - delta
    return point


def _stencil(h):
    rows = [np.zeros(3)]
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        rows += [e, -e]
    for i, j in itertools.combinations(range(3), 2):
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            e = np.zeros(3)
            e[i], e[j] = si * h, sj * h
            rows.append(e)
    return np.array(rows)


def _fd_hessian(u, h):
    H = np.empty((3, 3))
    c = u[0]
    for i in range(3):
        H[i, i] = (u[1 + 2 * i] - 2 * c + u[2 + 2 * i]) / h**2
    k = 7
    for i, j in itertools.combinations(range(3), 2):
        pp, pm, mp, mm = u[k:k + 4]
        H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h**2)
        k += 4
    return H


def hessian(cfg: TrapConfig, spin, point, h=None):
    """Central-difference Hessian (J/m^2) with one Richardson level."""
    h = cfg.hessian_step if h is None else h
    point = np.asarray(point, dtype=float)
    st = _stencil(1.0)
    pts = np.concatenate([point + st * h, point + st * (h / 2)])
    u = total_potential(cfg, pts, spin)
    n = len(st)
    coarse = _fd_hessian(u[:n], h)
    fine = _fd_hessian(u[n:], h / 2)
    H = (4 * fine - coarse) / 3
    return 0.5 * (H + H.T)


def _label_axes(vecs):
    """Permutation assigning eigenvector columns to the x, y, z axes."""
    best, best_score = None, -1.0
    for perm in itertools.permutations(range(3)):
        score = sum(abs(vecs[axis, col]) for axis, col in enumerate(perm))
        if score > best_score:
            best, best_score = perm, score
    return best


def trap_frequencies(cfg: TrapConfig, spin, minimum, return_axes=False):
    """Trap frequencies (Hz) along the principal axes nearest to x, y, z."""
    H = hessian(cfg, spin, minimum)
    lam, vecs = np.linalg.eigh(H)
    scale = np.max(np.abs(lam))
    if np.any(lam < -1e-9 * scale):
        raise SaddleError("negative Hessian eigenvalue: non-trapping direction", minimum)
    lam = np.clip(lam, 0.0, None)
    perm = _label_axes(vecs)
    freqs = tuple(float(np.sqrt(lam[c] / cfg.constants.mass) / (2 * np.pi)) for c in perm)
    if return_axes:
        return freqs, vecs[:, list(perm)]
    return freqs


def _ray_samples(cfg, n=500):
    w_min = min(min(pb.beam.waist_x, pb.beam.waist_y) for pb in cfg.beams)
    s_max = cfg.escape_range
    return np.unique(np.concatenate([np.geomspace(w_min / 100, s_max, n),
                                     np.linspace(0, s_max, n // 5)[1:]]))


def trap_depth(cfg: TrapConfig, spin, minimum, axes=None):
    """Lowest barrier (J) over escape rays along +-principal axes and +-vertical.

    Zero encodes a spilled trap (some ray never rises above the minimum).
    """
    minimum = np.asarray(minimum, dtype=float)
    if axes is None:
        try:
            _, axes = trap_frequencies(cfg, spin, minimum, return_axes=True)
        except SaddleError:
            axes = np.eye(3)
    dirs = [s * axes[:, i] for i in range(3) for s in (1, -1)] + [VERTICAL, -VERTICAL]
    s = _ray_samples(cfg)
    u0 = float(total_potential(cfg, minimum, spin))
    depth = np.inf
    for d in dirs:
        u = total_potential(cfg, minimum + s[:, None] * d, spin)
        k = int(np.argmax(u))
        barrier = u[k]
        if 0 < k < len(s) - 1:
            res = minimize_scalar(lambda t: -potential_at(cfg, minimum + t * d, spin),
                                  bounds=(s[k - 1], s[k + 1]), method="bounded",
                                  options={"xatol": 1e-3 * (s[k + 1] - s[k - 1])})
            barrier = max(barrier, -res.fun)
        depth = min(depth, barrier - u0)
    return max(0.0, float(depth))


def characterize(cfg: TrapConfig, seed=None):
    """Minimum, frequencies (m_F = 0) and depth for each Zeeman state."""
    minimum = find_minimum(cfg, SpinState.ZERO, seed)
    freqs, axes = trap_frequencies(cfg, SpinState.ZERO, minimum, return_axes=True)
    depth0 = trap_depth(cfg, SpinState.ZERO, minimum, axes)
    if cfg.gradient > 0 and cfg.constants.g_F != 0:
        try:
            m1 = find_minimum(cfg, SpinState.PLUS, minimum)
            depth1 = trap_depth(cfg, SpinState.PLUS, m1, axes)
        except TrapError:
            depth1 = 0.0
    else:
        depth1 = depth0
    depths = {-1: depth1, 0: depth0, 1: depth1}
    return TrapCharacterization(minimum, freqs, depths, axes)
