"""Forced evaporation through a ramp schedule.

The cloud is a thermal gas in the harmonic approximation of the trap minimum.
Between trap characterizations (every ``recharacterize_every`` seconds) the
mean trap frequency and the per-spin depths are interpolated linearly, and the
populations and shared temperature are integrated with fixed-step RK4.

Rate model (per Zeeman level ``s`` with ``eta_s = depth_s / k_B T``)::

    n0     = N_tot wbar^3 (m / 2 pi k_B T)^(3/2)
    gamma  = c_coll n0 sigma vbar,          vbar = sqrt(8 k_B T / pi m)
    dN_s   = -c_loss (eta_s - 4) exp(-eta_s) gamma N_s - N_s / tau_bg
    dT / T = sum_s dN_ev,s ((eta_s + eta~_s)/3 - 1) / N_tot + dwbar / wbar

with ``eta~ = (eta - 5)/(eta - 4)``. For shallow traps (``eta <= spill_eta``)
the closed form is replaced by direct spilling of the truncated Boltzmann tail:
the fraction ``Q(3, eta)`` above the depth leaves once per trap period, carrying
its mean energy ``3 k_B T Q(4, eta) / Q(3, eta)``. Both are shifted linearly in
``eta`` so that they join the evaporative rate and cooling at ``spill_eta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaincc, zeta

from .constants import RB87, PhysicalConstants
from .optics import Beam
from .painting import make_dwell
from .trap import PaintedBeam, TrapConfig, TrapError, characterize, optical_potential

ZETA3 = float(zeta(3))
MAX_RELATIVE_STEP = 0.05  # largest fractional change of N or T per RK4 step
SPINS = (-1, 0, 1)


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Controls:
    powers: tuple
    strokes: tuple
    gradient: float


@dataclass(frozen=True)
class RampSegment:
    duration: float
    power_start: tuple
    power_end: tuple
    stroke_start: tuple
    stroke_end: tuple
    gradient_start: float = 0.0
    gradient_end: float = 0.0
    jump: bool = False  # permits a discontinuity against the previous segment

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("segment duration must be > 0")
        for name in ("power_start", "power_end", "stroke_start", "stroke_end"):
            vals = getattr(self, name)
            if len(vals) != 2 or min(vals) < 0:
                raise ValueError(f"{name} needs two non-negative values")
        if min(self.gradient_start, self.gradient_end) < 0:
            raise ValueError("gradient must be >= 0")

    def start(self):
        return Controls(tuple(self.power_start), tuple(self.stroke_start), self.gradient_start)

    def end(self):
        return Controls(tuple(self.power_end), tuple(self.stroke_end), self.gradient_end)

    def at(self, frac):
        frac = min(max(frac, 0.0), 1.0)
        lerp = lambda a, b: a * (1 - frac) + b * frac  # noqa: E731 - exact at both ends
        return Controls(
            tuple(lerp(a, b) for a, b in zip(self.power_start, self.power_end)),
            tuple(lerp(a, b) for a, b in zip(self.stroke_start, self.stroke_end)),
            lerp(self.gradient_start, self.gradient_end),
        )


@dataclass(frozen=True)
class RampSchedule:
    segments: tuple
    hold: float = 0.0
    ramp_up: float = 0.0
    ramp_up_power: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.hold < 0 or self.ramp_up < 0:
            raise ValueError("hold and ramp-up durations must be >= 0")
        if (self.hold > 0 or self.ramp_up > 0) and not self.segments:
            raise ValueError("hold/ramp-up need at least one ramp segment")
        if self.ramp_up > 0 and (self.ramp_up_power is None or len(self.ramp_up_power) != 2):
            raise ValueError("ramp-up needs two target powers")
        for prev, seg in zip(self.segments, self.segments[1:]):
            if seg.jump:
                continue
            if not np.allclose(np.r_[prev.power_end, prev.stroke_end, prev.gradient_end],
                               np.r_[seg.power_start, seg.stroke_start, seg.gradient_start],
                               rtol=1e-12, atol=1e-15):
                raise ValueError("ramp controls must be continuous between segments")

    @property
    def evaporation_duration(self):
        return float(sum(s.duration for s in self.segments))

    @property
    def total_duration(self):
        return self.evaporation_duration + self.hold + self.ramp_up

    @property
    def shortest_segment(self):
        durations = [s.duration for s in self.segments]
        durations += [d for d in (self.hold, self.ramp_up) if d > 0]
        return min(durations) if durations else 0.0


def interpolate_controls(schedule: RampSchedule, t) -> Controls:
    """Piecewise-linear powers, strokes and gradient at time ``t``."""
    total = schedule.total_duration
    eps = 1e-12 * max(total, 1.0)
    if not schedule.segments or t < -eps or t > total + eps:
        raise ValueError(f"t = {t} outside the schedule [0, {total}]")
    t = min(max(t, 0.0), total)
    start = 0.0
    for seg in schedule.segments:
        if t <= start + seg.duration:
            return seg.at((t - start) / seg.duration)
        start += seg.duration
    last = schedule.segments[-1].end()
    if t <= start + schedule.hold or schedule.ramp_up == 0:
        return last
    frac = min((t - start - schedule.hold) / schedule.ramp_up, 1.0)
    powers = tuple(a + (b - a) * frac for a, b in zip(last.powers, schedule.ramp_up_power))
    return Controls(powers, last.strokes, last.gradient)


def cycle_time(schedule: RampSchedule, fixed_overheads) -> float:
    """Sum of the fixed sequence overheads (s) and the schedule duration."""
    overheads = dict(fixed_overheads)
    if any(v < 0 for v in overheads.values()):
        raise ValueError("overheads must be >= 0")
    return math.fsum(list(overheads.values()) + [schedule.total_duration])


# --------------------------------------------------------------------------
# trap setup


@dataclass(frozen=True)
class TrapSetup:
    """Fixed beam geometry; ``at(controls)`` sets powers, strokes and gradient."""

    beams: tuple
    profiles: tuple = ("parabolic", "parabolic")
    gravity: bool = True
    constants: PhysicalConstants = RB87

    def at(self, controls: Controls) -> TrapConfig:
        painted = tuple(
            PaintedBeam(b.with_power(p), make_dwell(prof, x))
            for b, p, x, prof in zip(self.beams, controls.powers, controls.strokes, self.profiles)
        )
        return TrapConfig(painted, controls.gradient, self.gravity, self.constants)


def reference_beams(wavelength=1064e-9):
    """Orthogonal horizontal crossing: 35 um beam along x, 5 um beam along y."""
    wide = Beam(20.0, 35e-6, 35e-6, wavelength, (1, 0, 0), (0, 1, 0), name="wide")
    tight = Beam(0.5, 5e-6, 5e-6, wavelength, (0, 1, 0), (1, 0, 0), name="tight")
    return (wide, tight)


# --------------------------------------------------------------------------
# cloud state and model


@dataclass(frozen=True)
class CloudState:
    N: tuple  # populations of m_F = -1, 0, +1
    T: float
    t: float = 0.0

    def __post_init__(self):
        if len(self.N) != 3 or min(self.N) < 0:
            raise ValueError("need three non-negative populations")
        if not self.T > 0:
            raise ValueError("temperature must be > 0")

    @property
    def total(self):
        return float(sum(self.N))

    @property
    def fraction_zero(self):
        tot = self.total
        return self.N[1] / tot if tot > 0 else 0.0


@dataclass(frozen=True)
class EvaporationModel:
    collision_prefactor: float = 0.5
    loss_prefactor: float = 2.0
    eta_offset: float = 4.0
    energy_offset: float = 5.0
    spill_eta: float = 5.0
    background_lifetime: float = 10.0
    three_body: bool = False
    L3: float = 4.3e-41


@dataclass(frozen=True)
class TrapSnapshot:
    """The parts of a characterization the rate equations need."""

    mean_omega: float
    depths: tuple  # per m_F = -1, 0, +1

    @classmethod
    def from_characterization(cls, char):
        return cls(char.mean_omega, tuple(char.depths[s] for s in SPINS))

    def as_array(self):
        return np.array([self.mean_omega, *self.depths])


def peak_density(N_tot, mean_omega, T, constants=RB87):
    return N_tot * mean_omega**3 * (constants.mass / (2 * np.pi * constants.k_B * T)) ** 1.5


def collision_rate(N_tot, mean_omega, T, constants=RB87, model=EvaporationModel()):
    if N_tot <= 0 or mean_omega <= 0:
        return 0.0
    vbar = math.sqrt(8 * constants.k_B * T / (math.pi * constants.mass))
    n0 = peak_density(N_tot, mean_omega, T, constants)
    return model.collision_prefactor * n0 * constants.cross_section * vbar


def _loss_and_cooling(eta, gamma, nu_spill, model):
    """(evaporative loss rate 1/s, cooling factor per evaporated atom)."""
    if eta > 700:
        return 0.0, 0.0
    if eta > model.spill_eta:
        off = model.eta_offset
        rate = model.loss_prefactor * (eta - off) * math.exp(-eta) * gamma
        eta_t = (eta - model.energy_offset) / (eta - off)
        return rate, (eta + eta_t) / 3 - 1
    # spill of the truncated Boltzmann tail, blended linearly in eta into the
    # evaporative values at spill_eta so the rate and cooling stay continuous
    es = model.spill_eta
    r_es, f_es = _loss_and_cooling(es * (1 + 1e-12), gamma, nu_spill, model)
    q3, q3_es = gammaincc(3, eta), gammaincc(3, es)
    g = gammaincc(4, eta) / q3 - 1 if q3 > 0 else 0.0
    g_es = gammaincc(4, es) / q3_es - 1
    w = eta / es
    return q3 * nu_spill + (r_es - q3_es * nu_spill) * w, g + (f_es - g_es) * w


def _rhs(y, snap, dsnap, s, constants, model):
    omega = max(snap[0] + s * dsnap[0], 0.0)
    depths = np.clip(snap[1:] + s * dsnap[1:], 0.0, None)
    N = np.clip(y[:3], 0.0, None)
    T = y[3]
    if not T > 0:
        raise ValueError("temperature dropped to zero")
    N_tot = N.sum()
    gamma = collision_rate(N_tot, omega, T, constants, model)
    nu_spill = omega / (2 * np.pi)
    inv_tau = 1 / model.background_lifetime if model.background_lifetime > 0 else 0.0
    three = 0.0
    if model.three_body and N_tot > 0:
        n0 = peak_density(N_tot, omega, T, constants)
        three = model.L3 * n0**2 / 3**1.5
    dN = np.empty(3)
    cool = 0.0
    for i in range(3):
        eta = depths[i] / (constants.k_B * T)
        rate, factor = _loss_and_cooling(eta, gamma, nu_spill, model)
        dN[i] = -(rate + inv_tau + three) * N[i]
        cool += -rate * N[i] * factor
    dT = T * (dsnap[0] / omega if omega > 0 else 0.0)
    if N_tot > 0:
        dT += T * cool / N_tot
    return np.append(dN, dT)


def evaporation_step(state: CloudState, char, dchar, dt, constants=RB87,
                     model=EvaporationModel()) -> CloudState:
    """Advance the cloud by one RK4 step of length ``dt``.

    ``char`` is a :class:`TrapSnapshot` (or characterization) at the start of the
    step and ``dchar`` its time derivative, as an array ``[dwbar, d depth_-1,
    d depth_0, d depth_+1]``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not isinstance(char, TrapSnapshot):
        char = TrapSnapshot.from_characterization(char)
    snap = char.as_array()
    dsnap = np.zeros(4) if dchar is None else np.asarray(dchar, dtype=float)
    if not snap[0] > 0:
        raise ValueError("trap frequencies must be positive")
    y = np.array([*state.N, state.T], dtype=float)
    k1 = _rhs(y, snap, dsnap, 0.0, constants, model)
    k2 = _rhs(y + 0.5 * dt * k1, snap, dsnap, 0.5 * dt, constants, model)
    k3 = _rhs(y + 0.5 * dt * k2, snap, dsnap, 0.5 * dt, constants, model)
    k4 = _rhs(y + dt * k3, snap, dsnap, dt, constants, model)
    y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not y[3] > 0:
        raise ValueError(f"temperature became non-positive at t = {state.t + dt:.6g} s")
    N = tuple(float(v) for v in np.clip(y[:3], 0.0, None))
    return CloudState(N, float(y[3]), state.t + dt)


# --------------------------------------------------------------------------
# derived quantities


def psd(state: CloudState, mean_omega, constants=RB87):
    """Peak phase-space density of a thermal cloud, N (hbar wbar / k_B T)^3."""
    if not state.T > 0:
        raise ValueError("temperature must be > 0")
    return state.total * (constants.hbar * mean_omega / (constants.k_B * state.T)) ** 3


def bec_stats(state: CloudState, mean_omega, constants=RB87):
    """Critical temperature and ideal-gas condensate fraction."""
    N_tot = state.total
    if not N_tot > 0:
        raise ValueError("bec_stats needs a non-empty cloud")
    T_c = constants.hbar * mean_omega / constants.k_B * (N_tot / ZETA3) ** (1 / 3)
    frac = max(0.0, 1 - (state.T / T_c) ** 3) if T_c > 0 else 0.0
    return {"T_c": T_c, "condensate_fraction": frac}


# --------------------------------------------------------------------------
# loading


@dataclass(frozen=True)
class Molasses:
    atom_number: float = 4e9
    temperature: float = 18e-6
    radius: float = 1.0e-3  # 1/e radius of the Gaussian cloud

    def __post_init__(self):
        if min(self.atom_number, self.temperature, self.radius) <= 0:
            raise ValueError("molasses parameters must be > 0")


def _sinh_grid(extent, finest, n):
    umax = np.arcsinh(extent / finest)
    return finest * np.sinh(np.linspace(-umax, umax, n))


def capture_fraction(cfg: TrapConfig, molasses: Molasses, n_xy=121, n_z=181):
    """Fraction of the molasses cloud where the optical potential exceeds k_B T."""
    r = molasses.radius
    w_min = min(min(pb.beam.waist_x, pb.beam.waist_y) for pb in cfg.beams)
    xs = _sinh_grid(4 * r, w_min / 2, n_xy)
    zs = _sinh_grid(4 * r, w_min / 20, n_z)
    threshold = cfg.constants.k_B * molasses.temperature
    gy = np.exp(-(xs / r) ** 2)
    gz = np.exp(-(zs / r) ** 2)
    captured = np.empty(n_xy)
    Y, Z = np.meshgrid(xs, zs, indexing="ij")
    for i, x in enumerate(xs):
        pts = np.stack([np.full_like(Y, x), Y, Z], axis=-1)
        inside = np.abs(optical_potential(cfg, pts)) > threshold
        plane = np.trapezoid(inside * gz[None, :], zs, axis=1)
        captured[i] = np.trapezoid(plane * gy, xs)
    num = np.trapezoid(captured * gy, xs)
    den = np.trapezoid(gy, xs) ** 2 * np.trapezoid(gz, zs)
    return float(num / den)


def load_from_molasses(cfg: TrapConfig, molasses: Molasses) -> CloudState:
    """Initial cloud: captured share of the molasses, equal thirds over m_F."""
    if all(pb.beam.power == 0 for pb in cfg.beams):
        frac = 0.0
    else:
        frac = capture_fraction(cfg, molasses)
    n = molasses.atom_number * frac / 3
    return CloudState((n, n, n), molasses.temperature, 0.0)


# --------------------------------------------------------------------------
# trajectories


TRAJECTORY_COLUMNS = (
    "t_s", "P1_W", "P2_W", "xs1_m", "xs2_m", "Bp_Tpm", "fx_Hz", "fy_Hz", "fz_Hz",
    "depth0_uK", "depthpm1_uK", "N_m1", "N_0", "N_p1", "T_K", "eta0", "gamma_el_Hz",
    "psd", "cond_frac",
)


@dataclass
class TrajectoryRow:
    t: float
    controls: Controls
    char: object
    state: CloudState
    eta: tuple
    gamma_el: float
    psd: float
    condensate_fraction: float

    @property
    def condensed_number(self):
        return self.state.total * self.condensate_fraction

    def values(self, constants=RB87):
        nan = float("nan")
        c = self.controls
        ch = self.char
        uK = constants.k_B * 1e-6
        freqs = ch.frequencies if ch is not None else (nan, nan, nan)
        d0 = ch.depths[0] / uK if ch is not None else nan
        d1 = ch.depths[1] / uK if ch is not None else nan
        P = c.powers if c is not None else (nan, nan)
        X = c.strokes if c is not None else (nan, nan)
        Bp = c.gradient if c is not None else nan
        return (self.t, *P, *X, Bp, *freqs, d0, d1, *self.state.N, self.state.T,
                self.eta[1], self.gamma_el, self.psd, self.condensate_fraction)


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    constants: PhysicalConstants = RB87
    failure: Exception = None

    @property
    def final(self):
        return self.rows[-1]

    @property
    def times(self):
        return np.array([r.t for r in self.rows])

    def column(self, name):
        idx = TRAJECTORY_COLUMNS.index(name)
        return np.array([r.values(self.constants)[idx] for r in self.rows])

    def max_psd(self):
        return max(r.psd for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRAJECTORY_COLUMNS)
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row.values(self.constants)])


def _row(t, controls, char, state, constants, model):
    if char is None:
        return TrajectoryRow(t, controls, None, state, (np.nan,) * 3, 0.0, 0.0, 0.0)
    omega = char.mean_omega
    eta = tuple(char.depths[s] / (constants.k_B * state.T) for s in SPINS)
    gamma = collision_rate(state.total, omega, state.T, constants, model)
    rho = psd(state, omega, constants)
    frac = bec_stats(state, omega, constants)["condensate_fraction"] if state.total > 0 else 0.0
    return TrajectoryRow(t, controls, char, state, eta, gamma, rho, frac)


def run_schedule(setup: TrapSetup, schedule: RampSchedule, initial: CloudState, dt=1e-4,
                 recharacterize_every=2e-3, model=EvaporationModel(), partial=False) -> Trajectory:
    """Characterize the trap along the schedule and integrate the cloud through it.

    Trap errors (e.g. spilling of the m_F = 0 trap) are re-raised with the
    failure time attached as ``err.time``. With ``partial=True`` the run stops
    at the last good characterization instead and the error is kept in
    ``Trajectory.failure``.
    """
    constants = setup.constants
    traj = Trajectory(constants=constants)
    total = schedule.total_duration
    if total == 0:
        traj.rows.append(_row(0.0, None, None, initial, constants, model))
        return traj
    if not 0 < dt <= recharacterize_every:
        raise ValueError("need 0 < dt <= recharacterize_every")
    if recharacterize_every > schedule.shortest_segment / 4 * (1 + 1e-9):
        raise ValueError("recharacterize_every must be <= shortest segment / 4")

    n_int = int(math.ceil(total / recharacterize_every - 1e-9))
    instants = np.minimum(np.arange(n_int + 1) * recharacterize_every, total)
    seed = None
    chars, ctrls = [], []
    for t in instants:
        controls = interpolate_controls(schedule, float(t))
        try:
            char = characterize(setup.at(controls), seed)
        except TrapError as err:
            err.time = float(t)
            if not partial or not chars:
                raise
            traj.failure = err
            break
        seed = char.minimum
        chars.append(char)
        ctrls.append(controls)
    n_int = len(chars) - 1

    state = replace(initial, t=0.0)
    traj.rows.append(_row(0.0, ctrls[0], chars[0], state, constants, model))
    for k in range(n_int):
        t0, t1 = float(instants[k]), float(instants[k + 1])
        a = TrapSnapshot.from_characterization(chars[k])
        b = TrapSnapshot.from_characterization(chars[k + 1])
        span = t1 - t0
        slope = (b.as_array() - a.as_array()) / span
        n_steps = max(1, int(math.ceil(span / dt - 1e-9)))
        # keep RK4 inside its stability region when rates are high
        y0 = np.array([*state.N, state.T])
        k0 = _rhs(y0, a.as_array(), slope, 0.0, constants, model)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(y0 > 0, np.abs(k0) / y0, 0.0)
        n_steps = max(n_steps, int(math.ceil(span * float(rel.max()) / MAX_RELATIVE_STEP)))
        h = span / n_steps
        for j in range(n_steps):
            snap = TrapSnapshot(*_split(a.as_array() + slope * (j * h)))
            state = evaporation_step(state, snap, slope, h, constants, model)
        state = replace(state, t=t1)
        traj.rows.append(_row(t1, ctrls[k + 1], chars[k + 1], state, constants, model))
    return traj


def _split(arr):
    return float(arr[0]), tuple(float(v) for v in arr[1:])


# --------------------------------------------------------------------------
# loading calibration


@dataclass(frozen=True)
class Calibration:
    molasses: Molasses
    initial: CloudState
    trajectory: Trajectory
    capture: float


def calibrate_loading(setup: TrapSetup, schedule: RampSchedule, molasses: Molasses,
                      target_condensed=6e4, bracket=(1e-4, 1e2), rtol=1e-3, **run_kw):
    """Rescale the molasses atom number so the schedule ends with ``target_condensed``.

    The capture model fixes the captured fraction; only the overall number is
    fitted. ``bracket`` gives the search range as multiples of the present
    molasses number. Raises ValueError if the target is not bracketed.
    """
    from scipy.optimize import brentq

    cfg0 = setup.at(interpolate_controls(schedule, 0.0))
    capture = capture_fraction(cfg0, molasses)
    if capture <= 0:
        raise ValueError("the initial trap captures no atoms")
    runs = {}

    def residual(log_scale):
        mol = replace(molasses, atom_number=molasses.atom_number * math.exp(log_scale))
        n = mol.atom_number * capture / 3
        init = CloudState((n, n, n), mol.temperature, 0.0)
        traj = run_schedule(setup, schedule, init, **run_kw)
        runs[log_scale] = (mol, init, traj)
        cond = traj.final.condensed_number
        return math.log(max(cond, 1e-300)) - math.log(target_condensed)

    lo, hi = (math.log(b) for b in bracket)
    if residual(lo) * residual(hi) > 0:
        raise ValueError("target condensate number not reached within the bracket")
    root = brentq(residual, lo, hi, rtol=rtol)
    mol, init, traj = runs[root] if root in runs else (None, None, None)
    if mol is None:
        residual(root)
        mol, init, traj = runs[root]
    return Calibration(mol, init, traj, capture)
