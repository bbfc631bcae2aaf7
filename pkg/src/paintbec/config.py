"""Run configuration: one JSON document with unit-suffixed keys.

Unknown keys are rejected at every level. Conversion helpers build the
library objects (beams, schedule, model, optimizer spaces) from a validated
config, and :func:`with_schedule` writes optimizer results back into one.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .constants import RB87, PhysicalConstants
from .evaporation import EvaporationModel, Molasses, RampSchedule, RampSegment, TrapSetup
from .optics import Beam

Pair = tuple[float, float]
Vec3 = tuple[float, float, float]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantsConfig(Strict):
    mass_kg: float = RB87.mass
    scattering_length_m: float = RB87.scattering_length
    c_dip_J_per_Wpm2: float = RB87.c_dip
    g_F: float = RB87.g_F
    gravity_mps2: float = RB87.gravity

    def build(self) -> PhysicalConstants:
        return RB87.with_(mass=self.mass_kg, scattering_length=self.scattering_length_m,
                          c_dip=self.c_dip_J_per_Wpm2, g_F=self.g_F, gravity=self.gravity_mps2)


class BeamConfig(Strict):
    name: str = ""
    waist_x_m: float = Field(gt=0)
    waist_y_m: float = Field(gt=0)
    wavelength_m: float = Field(1064e-9, gt=0)
    axis: Vec3 = (1.0, 0.0, 0.0)
    paint_axis: Vec3 = (0.0, 1.0, 0.0)
    focus_m: Vec3 = (0.0, 0.0, 0.0)
    dwell_profile: Literal["parabolic", "uniform"] = "parabolic"
    calibration_m_per_Hz: float = Field(1e-11, gt=0)
    center_frequency_Hz: float = Field(80e6, gt=0)
    painting_frequency_Hz: float = Field(1e5, gt=0)

    def build(self, power=0.0) -> Beam:
        return Beam(power, self.waist_x_m, self.waist_y_m, self.wavelength_m, self.axis,
                    self.paint_axis, self.focus_m, self.name)


class SegmentConfig(Strict):
    duration_s: float = Field(gt=0)
    power_start_W: Pair
    power_end_W: Pair
    stroke_start_m: Pair
    stroke_end_m: Pair
    gradient_start_Tpm: float = 0.0
    gradient_end_Tpm: float = 0.0
    jump: bool = False


class ScheduleConfig(Strict):
    segments: tuple[SegmentConfig, ...] = ()
    hold_s: float = Field(0.0, ge=0)
    ramp_up_s: float = Field(0.0, ge=0)
    ramp_up_power_W: Optional[Pair] = None

    def build(self) -> RampSchedule:
        segs = tuple(
            RampSegment(s.duration_s, s.power_start_W, s.power_end_W, s.stroke_start_m, s.stroke_end_m,
                        s.gradient_start_Tpm, s.gradient_end_Tpm, s.jump)
            for s in self.segments
        )
        return RampSchedule(segs, self.hold_s, self.ramp_up_s, self.ramp_up_power_W)

    @classmethod
    def from_schedule(cls, schedule: RampSchedule) -> "ScheduleConfig":
        segs = tuple(
            SegmentConfig(duration_s=s.duration, power_start_W=tuple(s.power_start),
                          power_end_W=tuple(s.power_end), stroke_start_m=tuple(s.stroke_start),
                          stroke_end_m=tuple(s.stroke_end), gradient_start_Tpm=s.gradient_start,
                          gradient_end_Tpm=s.gradient_end, jump=s.jump)
            for s in schedule.segments
        )
        rp = tuple(schedule.ramp_up_power) if schedule.ramp_up_power is not None else None
        return cls(segments=segs, hold_s=schedule.hold, ramp_up_s=schedule.ramp_up, ramp_up_power_W=rp)


class MolassesConfig(Strict):
    atom_number: float = Field(4e9, gt=0)
    temperature_K: float = Field(18e-6, gt=0)
    radius_m: float = Field(1e-3, gt=0)

    def build(self) -> Molasses:
        return Molasses(self.atom_number, self.temperature_K, self.radius_m)


class LaserConfig(Strict):
    """Molasses laser settings; they only enter the synthetic loading surrogate."""

    cooling_power: float = Field(1.0, gt=0)
    cooling_detuning_Gamma: float = -8.0
    repump_power: float = Field(1.0, gt=0)
    repump_detuning_MHz: float = 0.0
    pump_power: float = Field(1.0, gt=0)
    pump_detuning_MHz: float = 0.0
    molasses_duration_s: float = Field(0.031, gt=0)

    def build(self):
        from .optimizer import LaserSettings

        return LaserSettings(self.cooling_power, self.cooling_detuning_Gamma, self.repump_power,
                             self.repump_detuning_MHz, self.pump_power, self.pump_detuning_MHz,
                             self.molasses_duration_s)

    @classmethod
    def from_settings(cls, s) -> "LaserConfig":
        return cls(cooling_power=s.cooling_power, cooling_detuning_Gamma=s.cooling_detuning,
                   repump_power=s.repump_power, repump_detuning_MHz=s.repump_detuning,
                   pump_power=s.pump_power, pump_detuning_MHz=s.pump_detuning,
                   molasses_duration_s=s.molasses_duration)


class InitialCloudConfig(Strict):
    """Explicit initial populations; overrides the molasses capture model."""

    N: tuple[float, float, float]
    temperature_K: float = Field(gt=0)


class ModelConfig(Strict):
    collision_prefactor: float = Field(0.5, gt=0)
    loss_prefactor: float = Field(2.0, ge=0)
    eta_offset: float = 4.0
    energy_offset: float = 5.0
    spill_eta: float = 5.0
    background_lifetime_s: float = Field(10.0, ge=0)
    three_body: bool = False
    L3_m6ps: float = Field(4.3e-41, ge=0)

    def build(self) -> EvaporationModel:
        return EvaporationModel(self.collision_prefactor, self.loss_prefactor, self.eta_offset,
                                self.energy_offset, self.spill_eta, self.background_lifetime_s,
                                self.three_body, self.L3_m6ps)


class SimulationConfig(Strict):
    dt_s: float = Field(1e-4, gt=0)
    recharacterize_every_s: float = Field(2e-3, gt=0)
    initial: Optional[InitialCloudConfig] = None
    trap_at_s: float = Field(0.0, ge=0)


class DwellConfig(Strict):
    profile: Optional[Literal["uniform", "parabolic"]] = "uniform"
    positions_m: Optional[tuple[float, ...]] = None
    weights: Optional[tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.positions_m is not None or self.weights is not None:
            if self.positions_m is None or self.weights is None:
                raise ValueError("custom dwell needs both positions_m and weights")
            if len(self.positions_m) == 0:
                raise ValueError("dwell density is empty")
            if len(self.positions_m) != len(self.weights):
                raise ValueError("positions_m and weights differ in length")
            if min(self.weights) < 0 or not sum(self.weights) > 0:
                raise ValueError("dwell weights must be non-negative with positive sum")
        elif self.profile is None:
            raise ValueError("dwell needs a profile or positions_m/weights")
        return self


class PaintConfig(Strict):
    waist_m: float = Field(5e-6, gt=0)
    power_W: float = Field(1.0, gt=0)
    wavelength_m: float = Field(1064e-9, gt=0)
    calibration_m_per_Hz: float = Field(1e-11, gt=0)
    center_frequency_Hz: float = Field(80e6, gt=0)
    stroke_m: float = Field(25e-6, ge=0)
    painting_frequencies_Hz: tuple[float, ...] = (0.0, 1e3, 1e6, 1e5)
    labels: Optional[tuple[str, ...]] = None
    dwell: DwellConfig = DwellConfig()
    n_periods: int = Field(4, ge=1)
    half_width_m: float = Field(50e-6, gt=0)
    n_points: int = Field(401, ge=3)
    n_points_2d: int = Field(81, ge=3)
    trap_frequencies_Hz: tuple[float, ...] = (1000.0,)
    corrugation_threshold: float = Field(0.05, gt=0)

    @field_validator("painting_frequencies_Hz")
    @classmethod
    def _nonneg(cls, v):
        if not v or min(v) < 0:
            raise ValueError("need at least one painting frequency, all >= 0")
        return v

    @model_validator(mode="after")
    def _labels(self):
        if self.labels is not None and len(self.labels) != len(self.painting_frequencies_Hz):
            raise ValueError("labels must match painting_frequencies_Hz")
        return self


class ExportConfig(Strict):
    beam_index: int = Field(1, ge=0, le=1)
    stroke_m: Optional[float] = Field(None, ge=0)
    n_periods: int = Field(1, ge=1)
    sample_rate_Hz: Optional[float] = Field(None, gt=0)


class Stage1Config(Strict):
    population: int = 32
    generations: int = 20
    bounds: dict[str, Pair] = {
        "cooling_power": (0.2, 2.0),
        "cooling_detuning": (-20.0, -2.0),
        "repump_power": (0.1, 2.0),
        "repump_detuning": (-10.0, 10.0),
        "pump_power": (0.1, 2.0),
        "pump_detuning": (-10.0, 10.0),
        "molasses_duration": (0.005, 0.1),
        "P1": (5.0, 20.0),
        "P2": (0.1, 0.5),
        "xs1": (0.0, 1.1e-3),
        "xs2": (0.0, 210e-6),
        "Bp0": (0.0, 1.0),
        "fp1": (1e4, 2e5),
        "fp2": (1e4, 2e5),
    }


class OptimizerConfig(Strict):
    stage: Literal[1, 2] = 2
    population: int = Field(32, ge=4)
    generations: int = Field(60, ge=0)
    F: float = Field(0.7, gt=0, le=2)
    CR: float = Field(0.9, ge=0, le=1)
    workers: int = Field(1, ge=1)
    dt_s: float = Field(2e-4, gt=0)
    recharacterize_every_s: float = Field(5e-3, gt=0)
    random_baseline: int = Field(32, ge=0)
    seed_with_template: bool = False
    power1_bounds_W: Pair = (0.03, 20.0)
    power2_bounds_W: Pair = (0.005, 0.5)
    stroke1_bounds_m: Pair = (0.0, 1.1e-3)
    stroke2_bounds_m: Pair = (15.8e-6, 210e-6)
    gradient_bounds_Tpm: Pair = (0.0, 1.0)
    stage1: Stage1Config = Stage1Config()

    def stage2_bounds(self):
        return {"power_bounds": (self.power1_bounds_W, self.power2_bounds_W),
                "stroke_bounds": (self.stroke1_bounds_m, self.stroke2_bounds_m),
                "gradient_bounds": self.gradient_bounds_Tpm}


class RunConfig(Strict):
    seed: int = 0
    constants: ConstantsConfig = ConstantsConfig()
    beams: tuple[BeamConfig, BeamConfig] = (
        BeamConfig(name="wide", waist_x_m=35e-6, waist_y_m=35e-6, axis=(1, 0, 0), paint_axis=(0, 1, 0),
                   calibration_m_per_Hz=7e-11),
        BeamConfig(name="tight", waist_x_m=5e-6, waist_y_m=5e-6, axis=(0, 1, 0), paint_axis=(1, 0, 0),
                   calibration_m_per_Hz=1e-11),
    )
    gravity: bool = True
    schedule: ScheduleConfig = ScheduleConfig()
    overheads_s: dict[str, float] = {}
    molasses: MolassesConfig = MolassesConfig()
    laser: LaserConfig = LaserConfig()
    model: ModelConfig = ModelConfig()
    simulation: SimulationConfig = SimulationConfig()
    paint: PaintConfig = PaintConfig()
    export: ExportConfig = ExportConfig()
    optimizer: OptimizerConfig = OptimizerConfig()

    @field_validator("overheads_s")
    @classmethod
    def _overheads(cls, v):
        if any(x < 0 for x in v.values()):
            raise ValueError("overheads must be >= 0")
        return v

    # builders

    def setup(self) -> TrapSetup:
        beams = tuple(b.build() for b in self.beams)
        profiles = tuple(b.dwell_profile for b in self.beams)
        return TrapSetup(beams, profiles, self.gravity, self.constants.build())

    def build_schedule(self) -> RampSchedule:
        return self.schedule.build()

    def with_schedule(self, schedule: RampSchedule, **changes) -> "RunConfig":
        return self.model_copy(update={"schedule": ScheduleConfig.from_schedule(schedule), **changes})

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"


def load_config(path) -> RunConfig:
    """Parse and validate a config file. Raises OSError or pydantic.ValidationError."""
    text = Path(path).read_text()
    return RunConfig.model_validate_json(text)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(cfg.to_json())
