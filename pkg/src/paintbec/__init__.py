"""Simulator and optimizer for all-optical BEC production in painted dipole traps."""

__version__ = "0.1.0"

from .constants import RB87, PhysicalConstants
from .evaporation import (
    CloudState,
    EvaporationModel,
    Molasses,
    RampSchedule,
    RampSegment,
    Trajectory,
    TrapSetup,
    calibrate_loading,
    cycle_time,
    load_from_molasses,
    reference_beams,
    run_schedule,
)
from .optics import Beam
from .optimizer import DEConfig, EvaporationSpace, ParameterSpace, de_optimize
from .painting import DwellDensity, PaintingSpec, frequency_trajectory, time_averaged_intensity
from .trap import SpinState, TrapConfig, characterize

__all__ = [
    "RB87", "PhysicalConstants", "CloudState", "EvaporationModel", "Molasses", "RampSchedule",
    "RampSegment", "Trajectory", "TrapSetup", "calibrate_loading", "cycle_time", "load_from_molasses",
    "reference_beams", "run_schedule", "Beam", "DEConfig", "EvaporationSpace", "ParameterSpace",
    "de_optimize", "DwellDensity", "PaintingSpec", "frequency_trajectory", "time_averaged_intensity",
    "SpinState", "TrapConfig", "characterize",
]
