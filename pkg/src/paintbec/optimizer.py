"""Differential Evolution over ramp schedules and loading settings.

DE/rand/1/bin, maximizing. The population lives in the unit cube of a
:class:`ParameterSpace` (log-scaled parameters are mapped logarithmically), so
bound handling is one reflection rule for every parameter. Randomness is drawn
from a generator keyed by ``(seed, generation, member)``; results therefore do
not depend on the order or concurrency of the objective evaluations.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaporation import (
    CloudState,
    EvaporationModel,
    Molasses,
    RampSchedule,
    RampSegment,
    TrapSetup,
    capture_fraction,
    run_schedule,
)
from .trap import TrapError

# --------------------------------------------------------------------------
# parameter spaces


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float
    upper: float
    unit: str = ""
    log: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.log and self.lower <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be positive")

    def to_unit(self, x):
        if self.log:
            return (math.log(x) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (x - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        if self.log:
            x = math.exp(math.log(self.lower) + u * (math.log(self.upper) - math.log(self.lower)))
        else:
            x = self.lower + u * (self.upper - self.lower)
        return min(max(x, self.lower), self.upper)


class ParameterSpace:
    """Ordered parameter descriptors with a unit-cube mapping."""

    def __init__(self, parameters):
        self.parameters = tuple(parameters)
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @classmethod
    def box(cls, lower, upper, prefix="x"):
        return cls(Parameter(f"{prefix}{i + 1}", lo, hi) for i, (lo, hi) in enumerate(zip(lower, upper)))

    def __len__(self):
        return len(self.parameters)

    @property
    def names(self):
        return [p.name for p in self.parameters]

    @property
    def lower(self):
        return np.array([p.lower for p in self.parameters])

    @property
    def upper(self):
        return np.array([p.upper for p in self.parameters])

    def to_unit(self, x):
        return np.array([p.to_unit(float(v)) for p, v in zip(self.parameters, x)])

    def from_unit(self, u):
        return np.array([p.from_unit(float(v)) for p, v in zip(self.parameters, u)])

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


class EvaporationSpace(ParameterSpace):
    """Interior waypoints of a 6-ramp schedule plus one gradient level per ramp.

    The start and end controls of ``template`` are fixed. Each of the five
    interior waypoints carries (P1, P2, xs1, xs2); each ramp carries a constant
    gradient, so the default space has 5 x 4 + 6 = 26 parameters.
    """

    def __init__(self, template: RampSchedule, power_bounds, stroke_bounds, gradient_bounds):
        if len(template.segments) < 2:
            raise ValueError("template needs at least two ramps")
        self.template = template
        n = len(template.segments)
        params = []
        for k in range(1, n):
            for b in (0, 1):
                lo, hi = power_bounds[b]
                params.append(Parameter(f"P{b + 1}_w{k}", lo, hi, "W", log=True))
            for b in (0, 1):
                lo, hi = stroke_bounds[b]
                params.append(Parameter(f"xs{b + 1}_w{k}", lo, hi, "m"))
        for k in range(1, n + 1):
            lo, hi = gradient_bounds
            params.append(Parameter(f"Bp_r{k}", lo, hi, "T/m"))
        super().__init__(params)

    def encode(self, schedule: RampSchedule):
        segs = schedule.segments
        tmpl = self.template.segments
        if len(segs) != len(tmpl) or any(a.duration != b.duration for a, b in zip(segs, tmpl)):
            raise ValueError("schedule does not match the template ramp structure")
        for seg in segs:
            if seg.gradient_start != seg.gradient_end:
                raise ValueError("gradient must be constant within each ramp")
        x = []
        for seg in segs[:-1]:
            x += [*seg.power_end, *seg.stroke_end]
        x += [seg.gradient_start for seg in segs]
        return np.array(x, dtype=float)

    def decode(self, x) -> RampSchedule:
        x = [float(v) for v in x]
        if len(x) != len(self):
            raise ValueError(f"expected {len(self)} parameters, got {len(x)}")
        tmpl = self.template.segments
        n = len(tmpl)
        waypoints = [(tuple(tmpl[0].power_start), tuple(tmpl[0].stroke_start))]
        for k in range(n - 1):
            v = x[4 * k:4 * k + 4]
            waypoints.append(((v[0], v[1]), (v[2], v[3])))
        waypoints.append((tuple(tmpl[-1].power_end), tuple(tmpl[-1].stroke_end)))
        gradients = x[4 * (n - 1):]
        segs = []
        for k, seg in enumerate(tmpl):
            (pa, xa), (pb, xb) = waypoints[k], waypoints[k + 1]
            jump = k > 0 and gradients[k] != gradients[k - 1]
            segs.append(RampSegment(seg.duration, pa, pb, xa, xb, gradients[k], gradients[k], jump))
        return replace(self.template, segments=tuple(segs))


# --------------------------------------------------------------------------
# DE


@dataclass(frozen=True)
class DEConfig:
    population: int = 32
    F: float = 0.7
    CR: float = 0.9
    generations: int = 60
    seed: int = 0
    workers: int = 1
    executor: str = "process"  # "process" or "thread"; ignored for workers == 1

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if not 0 < self.F <= 2:
            raise ValueError("F must be in (0, 2]")
        if not 0 <= self.CR <= 1:
            raise ValueError("CR must be in [0, 1]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.executor not in ("process", "thread"):
            raise ValueError("executor must be 'process' or 'thread'")


@dataclass
class Evaluation:
    generation: int
    member: int
    params: np.ndarray
    objective: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class RunRecord:
    names: list
    evaluations: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, RunRecord) or self.names != other.names:
            return NotImplemented if not isinstance(other, RunRecord) else False
        if len(self.evaluations) != len(other.evaluations):
            return False
        return all(
            a.generation == b.generation and a.member == b.member
            and np.array_equal(a.params, b.params)
            and (a.objective == b.objective or (math.isnan(a.objective) and math.isnan(b.objective)))
            for a, b in zip(self.evaluations, other.evaluations)
        )

    @property
    def objectives(self):
        return np.array([e.objective for e in self.evaluations])

    def best_so_far(self):
        return np.maximum.accumulate(self.objectives) if self.evaluations else np.array([])

    def generation_best(self):
        """Best objective among all evaluations up to and including each generation."""
        gens = np.array([e.generation for e in self.evaluations])
        best = self.best_so_far()
        return np.array([best[np.nonzero(gens == g)[0][-1]] for g in np.unique(gens)])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "member", "objective"] + [f"p{i + 1}" for i in range(len(self.names))])
            for e in self.evaluations:
                w.writerow([e.generation, e.member, repr(float(e.objective))]
                           + [repr(float(v)) for v in e.params])

    @classmethod
    def read_csv(cls, path, names=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        k = len(header) - 3
        rec = cls(list(names) if names is not None else header[3:])
        for r in body:
            rec.evaluations.append(Evaluation(int(r[0]), int(r[1]), np.array([float(v) for v in r[3:3 + k]]),
                                              float(r[2])))
        return rec


@dataclass
class DEResult:
    best_params: np.ndarray
    best_value: float
    record: RunRecord
    population: np.ndarray
    values: np.ndarray


def _rng(seed, generation, member):
    return np.random.default_rng([int(seed), int(generation), int(member)])


def _reflect(u):
    u = np.where(u < 0, -u, u)
    u = np.where(u > 1, 2 - u, u)
    return np.clip(u, 0.0, 1.0)


def _safe_call(objective, x):
    t0 = time.perf_counter()
    try:
        val = float(objective(x))
        if math.isnan(val):
            val = -math.inf
    except Exception:  # noqa: BLE001 - any failure is a penalty, the run continues
        val = -math.inf
    return val, time.perf_counter() - t0


def _evaluate(objective, xs, cfg, pool):
    if pool is None:
        return [_safe_call(objective, x) for x in xs]
    return list(pool.map(_safe_call, [objective] * len(xs), xs))


def de_optimize(objective, space: ParameterSpace, cfg: DEConfig = DEConfig(), initial=None,
                progress=None) -> DEResult:
    """Maximize ``objective`` over ``space`` with DE/rand/1/bin.

    ``initial`` optionally seeds member 0 with a known parameter vector.
    ``progress(generation, best_value)`` is called after every generation.
    """
    D = len(space)
    NP = cfg.population
    unit = np.array([_rng(cfg.seed, 0, i).random(D) for i in range(NP)])
    if initial is not None:
        unit[0] = np.clip(space.to_unit(initial), 0.0, 1.0)
    record = RunRecord(space.names)

    pool = None
    if cfg.workers > 1:
        kind = ProcessPoolExecutor if cfg.executor == "process" else ThreadPoolExecutor
        pool = kind(max_workers=cfg.workers)
    try:
        xs = [space.from_unit(u) for u in unit]
        results = _evaluate(objective, xs, cfg, pool)
        values = np.array([r[0] for r in results])
        for i, (x, (v, wt)) in enumerate(zip(xs, results)):
            record.evaluations.append(Evaluation(0, i, x, v, wt))
        pop_x = np.array(xs)
        if progress:
            progress(0, float(values.max()))

        for g in range(1, cfg.generations + 1):
            trials = np.empty_like(unit)
            for i in range(NP):
                rng = _rng(cfg.seed, g, i)
                others = np.delete(np.arange(NP), i)
                a, b, c = rng.choice(others, 3, replace=False)
                mutant = unit[a] + cfg.F * (unit[b] - unit[c])
                cross = rng.random(D) < cfg.CR
                cross[rng.integers(D)] = True
                trials[i] = _reflect(np.where(cross, mutant, unit[i]))
            xs = [space.from_unit(u) for u in trials]
            results = _evaluate(objective, xs, cfg, pool)
            for i, (x, (v, wt)) in enumerate(zip(xs, results)):
                record.evaluations.append(Evaluation(g, i, x, v, wt))
                if v >= values[i]:
                    unit[i], pop_x[i], values[i] = trials[i], x, v
            if progress:
                progress(g, float(values.max()))
    finally:
        if pool is not None:
            pool.shutdown()

    best = int(np.argmax(values))
    return DEResult(pop_x[best].copy(), float(values[best]), record, pop_x, values)


# --------------------------------------------------------------------------
# benchmarks


def sphere(x):
    """Negated sphere; maximum 0 at the origin."""
    x = np.asarray(x, dtype=float)
    return -float(x @ x)


def rosenbrock(x):
    """Negated 2-D Rosenbrock; maximum 0 at (1, 1)."""
    x, y = float(x[0]), float(x[1])
    return -((1 - x) ** 2 + 100 * (y - x * x) ** 2)


BENCHMARKS = {
    "sphere": (sphere, ParameterSpace.box([-5.0] * 10, [5.0] * 10)),
    "rosenbrock": (rosenbrock, ParameterSpace.box([-2.0, -2.0], [2.0, 2.0])),
}

# Budgets that reach the benchmark tolerances (sphere > -1e-6, Rosenbrock
# within 1e-3 of (1, 1)) for every seed tried. With F = 0.7 the 10-D sphere
# stalls near -1e-5 after 300 generations, so it runs with F = 0.5.
BENCHMARK_BUDGETS = {
    "sphere": DEConfig(population=32, F=0.5, CR=0.9, generations=300),
    "rosenbrock": DEConfig(population=32, F=0.7, CR=0.9, generations=500),
}


# --------------------------------------------------------------------------
# simulator objectives


@dataclass(frozen=True)
class FinalAtomsObjective:
    """Condensed atom number at the end of a decoded schedule (0 on failure).

    Picklable so the population can be evaluated in worker processes.
    """

    setup: TrapSetup
    space: EvaporationSpace
    initial: CloudState
    dt: float = 2e-4
    recharacterize_every: float = 5e-3
    model: EvaporationModel = EvaporationModel()

    def __call__(self, x):
        return objective_final_atoms(self.setup, self.space, x, self.initial, self.dt,
                                     self.recharacterize_every, self.model)


def objective_final_atoms(setup: TrapSetup, space: EvaporationSpace, params, initial: CloudState,
                          dt=2e-4, recharacterize_every=5e-3, model=EvaporationModel()):
    """Final condensed number ``N_tot * condensate_fraction``; failed runs score 0."""
    schedule = space.decode(params)
    try:
        traj = run_schedule(setup, schedule, initial, dt, recharacterize_every, model)
    except (TrapError, ValueError):
        return 0.0
    return float(traj.final.condensed_number)


# --------------------------------------------------------------------------
# stage 1: loading surrogate


@dataclass(frozen=True)
class LaserSettings:
    """Laser-cooling settings of the molasses stage (powers relative to nominal)."""

    cooling_power: float = 1.0
    cooling_detuning: float = -8.0  # in natural linewidths
    repump_power: float = 1.0
    repump_detuning: float = 0.0  # MHz
    pump_power: float = 1.0
    pump_detuning: float = 0.0  # MHz
    molasses_duration: float = 0.031


@dataclass(frozen=True)
class MolassesSurrogate:
    """Synthetic, smooth map from laser settings to molasses (N, T).

    Not a physical model: it only gives stage 1 a landscape with an interior
    optimum. At the nominal point it returns ``reference``. Atom number falls
    off in Gaussian fashion away from the optimal detunings and saturates in
    the powers; temperature follows a Doppler-like ``(1 + delta^2) / |delta|``
    shape, relaxing toward its steady state with the molasses duration while
    the cloud expands and loses atoms.
    """

    reference: Molasses = Molasses()
    best_cooling_detuning: float = -8.0
    best_repump_detuning: float = 0.0
    best_pump_detuning: float = 0.0
    detuning_width: float = 4.0
    repump_width: float = 3.0
    pump_width: float = 2.0
    relax_time: float = 0.008
    loss_time: float = 0.25
    nominal_duration: float = 0.031

    def _number_factor(self, s: LaserSettings):
        sat = lambda p: p / (p + 0.25) / (1 / 1.25)  # noqa: E731 - 1 at nominal power
        g = math.exp(-0.5 * ((s.cooling_detuning - self.best_cooling_detuning) / self.detuning_width) ** 2)
        g *= math.exp(-0.5 * ((s.repump_detuning - self.best_repump_detuning) / self.repump_width) ** 2)
        g *= math.exp(-0.5 * ((s.pump_detuning - self.best_pump_detuning) / self.pump_width) ** 2)
        g *= sat(s.cooling_power) * sat(s.repump_power) * sat(s.pump_power) ** 0.5
        g *= math.exp(-(s.molasses_duration - self.nominal_duration) / self.loss_time)
        return g

    def _temperature_factor(self, s: LaserSettings):
        d = abs(s.cooling_detuning)
        shape = lambda d: (1 + (d / 4) ** 2) / (d / 4)  # noqa: E731
        steady = shape(max(d, 0.5)) / shape(abs(self.best_cooling_detuning))
        steady *= 0.6 + 0.4 * s.cooling_power
        relax = lambda t: math.exp(-t / self.relax_time)  # noqa: E731
        hot = 5.0
        start = hot + (steady - hot) * (1 - relax(s.molasses_duration))
        nominal = hot + (1.0 - hot) * (1 - relax(self.nominal_duration))
        return start / nominal

    def __call__(self, s: LaserSettings) -> Molasses:
        ref = self.reference
        return Molasses(ref.atom_number * self._number_factor(s),
                        ref.temperature * self._temperature_factor(s), ref.radius)


class LoadingSpace(ParameterSpace):
    """Stage-1 parameters: six laser settings, molasses duration, initial ODT
    powers and strokes, initial gradient and the two painting frequencies."""

    LASER = ("cooling_power", "cooling_detuning", "repump_power", "repump_detuning",
             "pump_power", "pump_detuning", "molasses_duration")

    def __init__(self, bounds: dict):
        units = {"cooling_power": "", "cooling_detuning": "Gamma", "repump_power": "",
                 "repump_detuning": "MHz", "pump_power": "", "pump_detuning": "MHz",
                 "molasses_duration": "s", "P1": "W", "P2": "W", "xs1": "m", "xs2": "m",
                 "Bp0": "T/m", "fp1": "Hz", "fp2": "Hz"}
        missing = set(units) - set(bounds)
        if missing:
            raise ValueError(f"missing stage-1 bounds: {sorted(missing)}")
        super().__init__(Parameter(k, *bounds[k], units[k]) for k in units)

    def decode(self, x):
        d = dict(zip(self.names, (float(v) for v in x)))
        laser = LaserSettings(**{k: d[k] for k in self.LASER})
        return {"laser": laser, "powers": (d["P1"], d["P2"]), "strokes": (d["xs1"], d["xs2"]),
                "gradient": d["Bp0"], "painting_frequencies": (d["fp1"], d["fp2"])}

    def encode(self, settings):
        laser = settings["laser"]
        vals = [getattr(laser, k) for k in self.LASER]
        vals += [*settings["powers"], *settings["strokes"], settings["gradient"],
                 *settings["painting_frequencies"]]
        return np.array(vals, dtype=float)


@dataclass(frozen=True)
class LoadingObjective:
    """Stage-1 objective: total atoms after the first ramp toward a fixed waypoint.

    Painting frequencies below ``margin`` times the trap frequencies heat the
    cloud out of the trap; they enter as a smooth loading-efficiency penalty.
    """

    setup: TrapSetup
    space: LoadingSpace
    first_ramp: RampSegment  # end controls and duration; start is taken from params
    surrogate: MolassesSurrogate = MolassesSurrogate()
    margin: float = 10.0
    dt: float = 2e-4
    recharacterize_every: float = 5e-3
    model: EvaporationModel = EvaporationModel()

    def __call__(self, x):
        s = self.space.decode(x)
        seg = self.first_ramp
        first = RampSegment(seg.duration, s["powers"], seg.power_end, s["strokes"], seg.stroke_end,
                            s["gradient"], seg.gradient_end)
        schedule = RampSchedule((first,))
        try:
            cfg = self.setup.at(first.start())
            molasses = self.surrogate(s["laser"])
            frac = capture_fraction(cfg, molasses)
            if frac <= 0:
                return 0.0
            from .trap import characterize

            f_max = max(characterize(cfg).frequencies)
            penalty = 1.0
            for fp in s["painting_frequencies"]:
                penalty *= 1 / (1 + (self.margin * f_max / fp) ** 4)
            n = molasses.atom_number * frac * penalty / 3
            traj = run_schedule(self.setup, schedule, CloudState((n, n, n), molasses.temperature),
                                self.dt, self.recharacterize_every, self.model)
        except (TrapError, ValueError):
            return 0.0
        return float(traj.final.state.total)


# --------------------------------------------------------------------------
# two-stage workflow


@dataclass
class TwoStageResult:
    stage1: DEResult
    stage2: DEResult
    loading: dict
    schedule: RampSchedule
    initial: CloudState


def random_baseline(objective, space: ParameterSpace, n=32, seed=0):
    """Objective values of ``n`` uniformly random bound-respecting vectors."""
    rng = np.random.default_rng([int(seed), 2**31 - 1])
    xs = [space.from_unit(rng.random(len(space))) for _ in range(n)]
    return np.array([_safe_call(objective, x)[0] for x in xs]), xs


def stage2_template(template: RampSchedule, loading: dict) -> RampSchedule:
    """Replace the template's start controls by the stage-1 initial settings."""
    segs = list(template.segments)
    first = segs[0]
    segs[0] = replace(first, power_start=tuple(loading["powers"]), stroke_start=tuple(loading["strokes"]),
                      gradient_start=first.gradient_start, gradient_end=first.gradient_end)
    return replace(template, segments=tuple(segs))


def two_stage_optimize(setup: TrapSetup, template: RampSchedule, loading_space: LoadingSpace,
                       stage2_bounds: dict, cfg1: DEConfig, cfg2: DEConfig,
                       surrogate: MolassesSurrogate = MolassesSurrogate(), dt=2e-4,
                       recharacterize_every=5e-3, model=EvaporationModel(), progress=None):
    """Stage 1 optimizes loading; stage 2 freezes it and optimizes the 26 ramp parameters."""
    obj1 = LoadingObjective(setup, loading_space, template.segments[0], surrogate, dt=dt,
                            recharacterize_every=recharacterize_every, model=model)
    r1 = de_optimize(obj1, loading_space, cfg1, progress=progress and (lambda g, v: progress(1, g, v)))
    loading = loading_space.decode(r1.best_params)

    tmpl = stage2_template(template, loading)
    space2 = EvaporationSpace(tmpl, **stage2_bounds)
    molasses = surrogate(loading["laser"])
    cfg0 = setup.at(tmpl.segments[0].start())
    n = molasses.atom_number * capture_fraction(cfg0, molasses) / 3
    initial = CloudState((n, n, n), molasses.temperature)
    obj2 = FinalAtomsObjective(setup, space2, initial, dt, recharacterize_every, model)
    r2 = de_optimize(obj2, space2, cfg2, progress=progress and (lambda g, v: progress(2, g, v)))
    return TwoStageResult(r1, r2, loading, space2.decode(r2.best_params), initial)
