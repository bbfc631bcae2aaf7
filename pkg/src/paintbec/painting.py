"""AOD painting: dwell densities, drive waveforms, RF spectra, averaged intensity.

Conventions
-----------
The painting *stroke* ``x_s`` is the movement amplitude, i.e. half of the full
swept width: the focus travels over ``[-x_s, +x_s]``. The AOD frequency maps to
position through a calibration ``kappa`` (m/Hz), so the drive frequency spans
``[f_c - f_s, f_c + f_s]`` with ``x_s = kappa * f_s``.

A dwell density is the probability density of the beam position over one
painting period. Grid densities (:class:`DwellDensity`) are piecewise constant
over cells centred on a uniform grid; the end cells are half-width so that the
support is exactly ``[-x_s, x_s]``. :class:`UniformDwell` and
:class:`ParabolicDwell` are closed-form families used by the trap code, where
the averaged intensity has to be evaluated many thousands of times.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .optics import Beam

_SQRT2PI = np.sqrt(2 * np.pi)
_SQRT1_2 = math.sqrt(0.5)
_SMALL_STROKE = 1e-2  # below this stroke/blur ratio use the moment expansion


def _ndtr1(t):
    return 0.5 * math.erfc(-t * _SQRT1_2)


def _phi1(t):
    return math.exp(-0.5 * t * t) / _SQRT2PI


def _phi(t):
    return np.exp(-0.5 * t * t) / _SQRT2PI


def _moment_series(t, sigma, phi, mu2, mu4):
    """Blurred density of a narrow symmetric sweep from its central moments."""
    t2 = t * t
    s2 = sigma * sigma
    return phi / sigma * (1 + mu2 / (2 * s2) * (t2 - 1) + mu4 / (24 * s2 * s2) * (t2 * t2 - 6 * t2 + 3))


@dataclass(frozen=True)
class PaintingSpec:
    center_frequency: float
    modulation_amplitude: float
    painting_frequency: float
    calibration: float

    def __post_init__(self):
        if not self.painting_frequency > 0:
            raise ValueError("painting frequency must be > 0")
        if self.modulation_amplitude < 0:
            raise ValueError("modulation amplitude must be >= 0")
        if not self.calibration > 0:
            raise ValueError("calibration kappa must be > 0")

    @classmethod
    def from_stroke(cls, stroke, painting_frequency, calibration, center_frequency=80e6):
        return cls(center_frequency, stroke / calibration, painting_frequency, calibration)

    @property
    def stroke(self):
        return self.calibration * self.modulation_amplitude

    @property
    def frequency_band(self):
        return (self.center_frequency - self.modulation_amplitude,
                self.center_frequency + self.modulation_amplitude)


# --------------------------------------------------------------------------
# dwell densities


class DwellDensity:
    """Piecewise-constant position density on a uniform grid over [-x_s, x_s].

    ``masses[j]`` is the probability of finding the beam in cell ``j``. A single
    grid point is a point mass (no painting).
    """

    def __init__(self, positions, masses):
        positions = np.asarray(positions, dtype=float).ravel()
        masses = np.asarray(masses, dtype=float).ravel()
        if positions.size == 0 or positions.shape != masses.shape:
            raise ValueError("dwell density needs matching, non-empty positions and masses")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("dwell masses must be finite and non-negative")
        total = masses.sum()
        if not total > 0:
            raise ValueError("dwell density is identically zero")
        if positions.size > 1:
            steps = np.diff(positions)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-6 * steps.mean():
                raise ValueError("dwell positions must form an increasing uniform grid")
        self.positions = positions
        self.masses = masses / total

    @classmethod
    def from_density(cls, positions, density):
        """Build from density samples; cell masses are density times cell width."""
        dens = cls(positions, np.ones_like(np.asarray(positions, dtype=float)))
        return cls(positions, np.asarray(density, dtype=float) * dens.widths)

    @classmethod
    def point_mass(cls, position=0.0):
        return cls([position], [1.0])

    @property
    def is_point_mass(self):
        return self.positions.size == 1

    @property
    def stroke(self):
        return float(np.max(np.abs(self.positions)))

    @property
    def edges(self):
        x = self.positions
        if x.size == 1:
            return np.array([x[0], x[0]])
        mids = 0.5 * (x[1:] + x[:-1])
        return np.concatenate([[x[0]], mids, [x[-1]]])

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def density(self):
        """Density per unit length in each cell (integrates to one)."""
        if self.is_point_mass:
            return np.array([np.inf])
        return self.masses / self.widths

    def smooth(self, u, sigma):
        """Convolution of the density with a unit normal of width ``sigma``."""
        u = np.asarray(u, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if self.is_point_mass:
            t = (u - self.positions[0]) / sigma
            return _phi(t) / sigma
        rho = self.density
        jumps = np.diff(np.concatenate([[0.0], rho, [0.0]]))
        t = (u[..., None] - self.edges) / sigma[..., None]
        return ndtr(t) @ jumps

    def quantile(self, q):
        """Inverse of the piecewise-linear cumulative distribution."""
        q = np.asarray(q, dtype=float)
        if self.is_point_mass:
            return np.full_like(q, self.positions[0])
        cdf = np.concatenate([[0.0], np.cumsum(self.masses)])
        cdf[-1] = 1.0
        e = self.edges
        cell = np.searchsorted(cdf, q, side="left") - 1
        first = int(np.flatnonzero(self.masses > 0)[0])
        cell = np.clip(cell, first, self.masses.size - 1)
        m = self.masses[cell]
        frac = np.where(m > 0, (q - cdf[cell]) / np.where(m > 0, m, 1.0), 0.0)
        return e[cell] + np.clip(frac, 0.0, 1.0) * (e[cell + 1] - e[cell])

    def histogram(self, samples):
        """Fraction of ``samples`` falling in each cell."""
        counts, _ = np.histogram(samples, bins=self.edges)
        return counts / max(len(samples), 1)

    def __repr__(self):
        return f"DwellDensity(n={self.positions.size}, stroke={self.stroke:.3g})"


@dataclass(frozen=True)
class UniformDwell:
    """Constant-speed sweep (triangle wave) over [-stroke, stroke]."""

    stroke: float

    def smooth(self, u, sigma):
        u = np.asarray(u, dtype=float)
        a = self.stroke
        t = u / sigma
        series = _moment_series(t, sigma, _phi(t), a * a / 3, a**4 / 5)
        if a <= _SMALL_STROKE * np.min(sigma):
            return series
        with np.errstate(divide="ignore", invalid="ignore"):
            exact = (ndtr((u + a) / sigma) - ndtr((u - a) / sigma)) / (2 * a)
        return np.where(a <= _SMALL_STROKE * sigma, series, exact)

    def smooth_scalar(self, u, sigma):
        if abs(u) > self.stroke + 40 * sigma:
            return 0.0
        a = self.stroke
        if a <= _SMALL_STROKE * sigma:
            t = u / sigma
            return _moment_series(t, sigma, _phi1(t), a * a / 3, a**4 / 5)
        return (_ndtr1((u + a) / sigma) - _ndtr1((u - a) / sigma)) / (2 * a)

    def to_grid(self, n=201):
        if self.stroke <= 0:
            return DwellDensity.point_mass()
        x = np.linspace(-self.stroke, self.stroke, n)
        return DwellDensity.from_density(x, np.ones_like(x))


@dataclass(frozen=True)
class ParabolicDwell:
    """Dwell density proportional to 1 - (x/stroke)^2.

    For strokes much larger than the waist this paints a harmonic
    time-averaged potential along the paint axis.
    """

    stroke: float

    def smooth(self, u, sigma):
        u = np.asarray(u, dtype=float)
        a = self.stroke
        t = u / sigma
        series = _moment_series(t, sigma, _phi(t), a * a / 5, 3 * a**4 / 35)
        if a <= _SMALL_STROKE * np.min(sigma):
            return series
        return np.where(a <= _SMALL_STROKE * sigma, series, self._exact(u, sigma))

    def _exact(self, u, sigma):
        a = self.stroke
        c0 = 3 / (4 * a)
        c2 = -c0 / a**2
        lo = (u - a) / sigma
        hi = (u + a) / sigma
        p_lo, p_hi = _phi(lo), _phi(hi)
        m0 = ndtr(hi) - ndtr(lo)
        m1 = p_lo - p_hi
        m2 = m0 + lo * p_lo - hi * p_hi
        return c0 * m0 + c2 * (u * u * m0 - 2 * u * sigma * m1 + sigma**2 * m2)

    def smooth_scalar(self, u, sigma):
        if abs(u) > self.stroke + 40 * sigma:
            return 0.0
        a = self.stroke
        if a <= _SMALL_STROKE * sigma:
            t = u / sigma
            return _moment_series(t, sigma, _phi1(t), a * a / 5, 3 * a**4 / 35)
        c0 = 3 / (4 * a)
        c2 = -c0 / (a * a)
        lo = (u - a) / sigma
        hi = (u + a) / sigma
        p_lo, p_hi = _phi1(lo), _phi1(hi)
        m0 = _ndtr1(hi) - _ndtr1(lo)
        m1 = p_lo - p_hi
        m2 = m0 + lo * p_lo - hi * p_hi
        return c0 * m0 + c2 * (u * u * m0 - 2 * u * sigma * m1 + sigma * sigma * m2)

    def to_grid(self, n=201):
        if self.stroke <= 0:
            return DwellDensity.point_mass()
        x = np.linspace(-self.stroke, self.stroke, n)
        return DwellDensity.from_density(x, np.clip(1 - (x / self.stroke) ** 2, 0, None))


DWELL_PROFILES = {"uniform": UniformDwell, "parabolic": ParabolicDwell}


def make_dwell(profile, stroke):
    try:
        return DWELL_PROFILES[profile](float(stroke))
    except KeyError:
        raise ValueError(f"unknown dwell profile {profile!r}") from None


# --------------------------------------------------------------------------
# deconvolution


@dataclass
class DeconvolutionResult:
    dwell: DwellDensity
    residual: float
    converged: bool
    clipped: bool
    iterations: int
    residual_history: list = field(default_factory=list)


def _cell_response(positions, edges, sigma):
    """K[i, j]: smoothed density at x_i from unit mass spread over cell j."""
    t = ndtr((positions[:, None] - edges[None, :]) / sigma)
    width = np.diff(edges)
    return (t[:, :-1] - t[:, 1:]) / width


def dwell_density_for_profile(positions, target, beam_waist, tol=1e-3, max_iters=500):
    """Find a dwell density whose painted 1-D beam profile matches ``target``.

    The forward model smooths the dwell density with the static beam profile
    ``exp(-2 x^2 / w^2)``; both sides are compared after normalising to unit
    area. Starting from ``d ~ target``, a multiplicative (Richardson-Lucy)
    update is iterated until the max residual relative to the target peak drops
    below ``tol``. Points within one waist of the stroke edges are excluded from
    the residual, since no non-negative density can reproduce a hard edge.

    The best iterate is returned; ``residual_history`` holds the best residual
    after each iteration and is therefore non-increasing.
    """
    positions = np.asarray(positions, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if positions.shape != target.shape or positions.size == 0:
        raise ValueError("positions and target must be matching non-empty arrays")
    if np.any(target < 0) or not np.any(target > 0):
        raise ValueError("target profile must be non-negative and not identically zero")
    if positions.size == 1 or np.ptp(positions) == 0:
        return DeconvolutionResult(DwellDensity.point_mass(float(positions.mean())), 0.0, True, False, 0, [0.0])

    sigma = beam_waist / 2
    grid = DwellDensity(positions, np.ones_like(positions))
    edges, widths = grid.edges, grid.widths
    t_norm = target / np.sum(target * widths)
    K = _cell_response(positions, edges, sigma)
    norm = K.T @ np.ones_like(positions)

    stroke = np.max(np.abs(positions))
    interior = np.abs(positions) <= stroke - beam_waist
    if not np.any(interior):
        interior = np.ones_like(positions, dtype=bool)
    scale = t_norm.max()

    def residual_of(m):
        f = K @ m
        return float(np.max(np.abs(f - t_norm)[interior]) / scale)

    m = target * widths
    m = m / m.sum()
    best_m, best_res = m.copy(), residual_of(m)
    history = [best_res]
    clipped = False
    converged = best_res < tol
    it = 0
    while not converged and it < max_iters:
        it += 1
        f = K @ m
        ratio = np.divide(t_norm, f, out=np.zeros_like(f), where=f > 0)
        m = m * (K.T @ ratio) / norm
        tiny = (m > 0) & (m < 1e-14 * m.max())
        if np.any(tiny & (target > 0)):
            clipped = True
        m[tiny] = 0.0
        m = m / m.sum()
        res = residual_of(m)
        if res < best_res:
            best_m, best_res = m.copy(), res
        history.append(best_res)
        converged = best_res < tol
    return DeconvolutionResult(DwellDensity(positions, best_m), best_res, converged, clipped, it, history)


# --------------------------------------------------------------------------
# waveforms


@dataclass
class Waveform:
    """One painting period of the AOD drive signal."""

    sample_rate: float
    frequency: np.ndarray
    phase: np.ndarray
    painting_frequency: float
    center_frequency: float
    gaps: bool = False

    @property
    def n_samples(self):
        return self.frequency.size

    @property
    def times(self):
        return np.arange(self.n_samples) / self.sample_rate

    def period_phase_advance(self):
        """Phase accumulated over one full period, including the wrap sample."""
        return self.phase[-1] + np.pi * (self.frequency[-1] + self.frequency[0]) / self.sample_rate

    def repeated(self, n_periods=1):
        """(t, f, phi) over ``n_periods`` with phase continuity across periods."""
        k = np.repeat(np.arange(n_periods), self.n_samples)
        t = np.arange(self.n_samples * n_periods) / self.sample_rate
        f = np.tile(self.frequency, n_periods)
        phi = np.tile(self.phase, n_periods) + k * self.period_phase_advance()
        return t, f, phi


def frequency_trajectory(dwell: DwellDensity, spec: PaintingSpec, sample_rate=None) -> Waveform:
    """Drive-frequency trajectory realising ``dwell`` with a forward/backward sweep.

    The position follows the inverse cumulative dwell distribution forward over
    the first half period and backward over the second, so the time spent near
    ``x`` is proportional to ``d(x)``. Phase is the trapezoidal integral of
    ``2 pi f``.
    """
    f_p = spec.painting_frequency
    if sample_rate is None:
        sample_rate = 200 * f_p
    if sample_rate < 100 * f_p * (1 - 1e-12):
        raise ValueError("sample rate must be at least 100 x painting frequency")
    if hasattr(dwell, "to_grid"):
        dwell = dwell.to_grid()
    if dwell.stroke > spec.stroke * (1 + 1e-9) + 1e-15:
        raise ValueError("dwell density extends beyond the painting stroke")
    n = int(round(sample_rate / f_p))
    if abs(n * f_p - sample_rate) > 1e-9 * sample_rate:
        raise ValueError("sample rate must be an integer multiple of the painting frequency")
    u = 2.0 * np.arange(n) / n
    q = np.where(u < 1, u, 2 - u)
    x = dwell.quantile(q)
    f = spec.center_frequency + x / spec.calibration
    lo, hi = spec.frequency_band
    f = np.clip(f, lo, hi)
    phase = np.concatenate([[0.0], np.cumsum(np.pi * (f[1:] + f[:-1]) / sample_rate)])
    gaps = bool(np.any(dwell.masses == 0)) and not dwell.is_point_mass
    return Waveform(float(sample_rate), f, phase, f_p, spec.center_frequency, gaps)


def _baseband(w: Waveform, n_periods):
    t, _, phi = w.repeated(n_periods)
    return t, np.exp(1j * (phi - 2 * np.pi * w.center_frequency * t))


def rf_spectrum(w: Waveform, n_periods=1):
    """Magnitude spectrum of ``exp(i phi)`` repeated ``n_periods`` times.

    Computed at baseband and shifted back to absolute frequency, so that the
    carrier need not be below Nyquist. Amplitudes are normalised so that a pure
    tone has amplitude one and ``sum(amp**2) == 1`` (Parseval).

    Returns ``(frequencies_Hz, amplitudes)`` sorted by frequency.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    _, s = _baseband(w, n_periods)
    spec = np.fft.fftshift(np.fft.fft(s)) / s.size
    freqs = w.center_frequency + np.fft.fftshift(np.fft.fftfreq(s.size, 1 / w.sample_rate))
    return freqs, np.abs(spec)


def sideband_comb(w: Waveform):
    """Exact line spectrum of the periodic drive.

    A periodic drive has lines at ``f_mean + k f_p``, where ``f_mean`` is the
    period-averaged frequency. Returns ``(line_frequencies, line_powers)``.
    """
    t, s = _baseband(w, 1)
    period = w.n_samples / w.sample_rate
    drift = w.period_phase_advance() - 2 * np.pi * w.center_frequency * period
    offset = drift / (2 * np.pi * period)
    periodic = s * np.exp(-2j * np.pi * offset * t)
    c = np.fft.fft(periodic) / s.size
    k = np.fft.fftfreq(s.size, 1 / s.size)
    freqs = w.center_frequency + offset + k * w.painting_frequency
    order = np.argsort(freqs)
    return freqs[order], np.abs(c[order]) ** 2


def sweep_sample_rate(spec: PaintingSpec, samples_per_period=200):
    f_p = spec.painting_frequency
    needed = 4 * (spec.modulation_amplitude + 20 * f_p)
    per_period = max(samples_per_period, int(np.ceil(needed / f_p)))
    per_period += per_period % 2
    return per_period * f_p


def sideband_lines(spec: PaintingSpec, dwell=None):
    """Positions (m, relative to the centre) and power weights of the RF lines.

    Each line ``f_k`` diffracts a static copy of the beam to ``kappa (f_k - f_c)``.
    A static drive (no stroke) is a single line at the centre.
    """
    if spec.modulation_amplitude == 0:
        return np.zeros(1), np.ones(1)
    if dwell is None:
        dwell = UniformDwell(spec.stroke)
    w = frequency_trajectory(dwell, spec, sweep_sample_rate(spec))
    freqs, power = sideband_comb(w)
    keep = power > 1e-14 * power.max()
    return spec.calibration * (freqs[keep] - spec.center_frequency), power[keep]


def comb_intensity(beam: Beam, lines, points):
    """Averaged intensity of the diffracted line comb at ``points`` (..., 3).

    The lines beat at multiples of ``f_p``, far above any trap frequency, so
    the cross terms average out and the intensity is the power-weighted sum of
    static beams displaced along the paint axis.
    """
    centers, power = lines
    weights = power / power.sum()
    p, q, z = beam.local_coordinates(points)
    wx, wy = beam.waists_at(z)
    # the line sum only depends on (p, wx); evaluate it once per distinct pair
    pairs, inverse = np.unique(np.stack([p.ravel(), wx.ravel()], axis=1), axis=0, return_inverse=True)
    comb = np.empty(len(pairs))
    for i in range(0, len(pairs), 256):
        pp, ww = pairs[i:i + 256, :1], pairs[i:i + 256, 1:]
        comb[i:i + 256] = np.exp(-2 * (pp - centers[None, :]) ** 2 / ww**2) @ weights
    comb = comb[inverse.ravel()].reshape(p.shape)
    return 2 * beam.power / (np.pi * wx * wy) * np.exp(-2 * q**2 / wy**2) * comb


def sideband_fragmentation(spec: PaintingSpec, beam_waist, dwell=None, n_eval=2001):
    """Spatial well spacing and corrugation of the painted potential.

    Corrugation is ``(max - min) / max`` of the line-comb intensity (a sum of
    Gaussians of waist ``beam_waist``) over the central half of the stroke.
    """
    centers, power = sideband_lines(spec, dwell)
    half = spec.stroke / 2
    x = np.linspace(-half, half, n_eval) if half > 0 else np.zeros(1)
    profile = np.exp(-2 * (x[:, None] - centers[None, :]) ** 2 / beam_waist**2) @ power
    corrugation = float((profile.max() - profile.min()) / profile.max())
    return {"well_spacing": spec.calibration * spec.painting_frequency, "corrugation": corrugation}


def validate_painting(spec: PaintingSpec, trap_freqs, margin=10.0, beam_waist=None,
                      corrugation_threshold=0.05):
    """Return a list of warnings; an empty list means the painting is acceptable."""
    trap_freqs = np.asarray(trap_freqs, dtype=float)
    if np.any(trap_freqs < 0):
        raise ValueError("trap frequencies must be >= 0")
    warnings = []
    f_max = float(trap_freqs.max()) if trap_freqs.size else 0.0
    if spec.painting_frequency < margin * f_max:
        warnings.append(
            f"painting frequency {spec.painting_frequency:.4g} Hz is below {margin:g} x the "
            f"highest trap frequency ({f_max:.4g} Hz); atoms follow the moving beam and heat"
        )
    if beam_waist is not None and spec.modulation_amplitude > 0:
        corr = sideband_fragmentation(spec, beam_waist)["corrugation"]
        if corr > corrugation_threshold:
            warnings.append(
                f"sideband wells resolved: corrugation {corr:.3f} exceeds {corrugation_threshold:g}"
            )
    return warnings


# --------------------------------------------------------------------------
# averaged intensity


def time_averaged_intensity(beam: Beam, dwell, points):
    """Painting-averaged intensity (W/m^2) at ``points`` (..., 3).

    The sweep along ``beam.paint_axis`` is integrated exactly for the
    piecewise-constant (or closed-form) dwell density, which reduces the
    Gaussian along the paint axis to ``dwell.smooth(p, w_x(z) / 2)``.
    """
    p, q, z = beam.local_coordinates(points)
    wx, wy = beam.waists_at(z)
    far = ~(np.isfinite(wx) & np.isfinite(wy))
    if np.any(far):  # beyond float range along the axis: no light
        wx, wy = np.where(far, 1.0, wx), np.where(far, 1.0, wy)
    with np.errstate(over="ignore", under="ignore"):
        out = beam.power * np.sqrt(2 / np.pi) / wy * np.exp(-2 * q**2 / wy**2) * dwell.smooth(p, wx / 2)
    return np.where(far, 0.0, out) if np.any(far) else out


def sampled_time_average(beam: Beam, waveform: Waveform, calibration, points):
    """Brute-force average of the moving static beam over one drive period."""
    from .optics import gaussian_intensity

    points = np.asarray(points, dtype=float)
    shifts = (waveform.frequency - waveform.center_frequency) * calibration
    axis = np.asarray(beam.paint_axis, dtype=float)
    acc = np.zeros(points.shape[:-1])
    for s in shifts:
        acc += gaussian_intensity(beam, points - s * axis)
    return acc / shifts.size


# --------------------------------------------------------------------------
# export


def write_waveform_csv(path, w: Waveform, n_periods=1):
    t, f, phi = w.repeated(n_periods)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_s", "f_Hz", "phase_rad"])
        for row in zip(t, f, phi):
            writer.writerow([repr(float(v)) for v in row])


def read_waveform_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def iq_samples(phase):
    """Interleaved little-endian float32 (I, Q) = (cos phi, sin phi)."""
    iq = np.empty(2 * len(phase), dtype="<f4")
    iq[0::2] = np.cos(phase)
    iq[1::2] = np.sin(phase)
    return iq


def write_waveform_iq(path, w: Waveform, n_periods=1):
    _, _, phi = w.repeated(n_periods)
    iq_samples(phi).tofile(path)
