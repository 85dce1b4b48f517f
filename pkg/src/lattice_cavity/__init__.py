"""Band-gap cavities for matter waves in a finite optical lattice.

Modules
-------
units        recoil units and lattice geometry
bloch        Bloch bands (plane waves) and complex band structure (monodromy)
local_bands  position-dependent band structure of the Gaussian envelope
transmission analytic transmission of the finite lattice
propagator   split-operator propagation with a time-dependent depth
revival      collapse/revival analysis and box-well reference
config       TOML configuration schema
runner       experiment orchestration
"""

from .bloch import band_edges, complex_k, diagonalize_bloch, effective_mass, group_velocity, monodromy
from .local_bands import CavityGeometry, build_band_map, cavity_at_energy, find_cavity
from .propagator import (RampSchedule, SpatialGrid, SplitOperator, WavePacketState, adiabaticity_check,
                         initial_gaussian, run_experiment, trapping_condition)
from .revival import box_revival_times, detect_revivals, effective_mass_prediction, scaling_fit
from .transmission import averaged_transmission, mono_transmission, transmission_curve
from .units import RecoilUnits, lattice_from_beams, lattice_from_period, recoil_units

__all__ = [
    "band_edges", "complex_k", "diagonalize_bloch", "effective_mass", "group_velocity", "monodromy",
    "CavityGeometry", "build_band_map", "cavity_at_energy", "find_cavity",
    "RampSchedule", "SpatialGrid", "SplitOperator", "WavePacketState", "adiabaticity_check",
    "initial_gaussian", "run_experiment", "trapping_condition",
    "box_revival_times", "detect_revivals", "effective_mass_prediction", "scaling_fit",
    "averaged_transmission", "mono_transmission", "transmission_curve",
    "RecoilUnits", "lattice_from_beams", "lattice_from_period", "recoil_units",
]
