"""Fast simulation of cryo-electron tilt-series from clean density volumes.

Noiseless projections are turned into realistic ones either by
tilt-dependent moment matching plus Gaussian noise, or additionally by a
short neural-style-transfer pass against projections of another tomogram;
tomograms are recovered by weighted filtered back-projection.
"""
__version__ = "0.1.0"

from .core import (
    DensityVolume,
    PerTiltStats,
    ProjectionStack,
    TiltGeometry,
    evenly_spaced_geometry,
    validate_stack,
)
from .fbp import FilterSpec, backproject, build_filter, filter_projections, reconstruct
from .noise import NoiseModel, simulate_baseline, simulate_noisy
from .nst import NstConfig, build_faket, transfer_stack, transfer_tilt
from .radon import ProjectionConfig, bin2x, forward_project
