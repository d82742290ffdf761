"""Synthetic density volumes for tests and demos."""
from __future__ import annotations

import numpy as np

from .core import DensityVolume

__all__ = ["ball", "cylinder", "scattered_particles"]


def _centred_grid(shape):
    return [np.arange(n) - (n - 1) / 2.0 for n in shape]


def ball(n: int, radius: float, value: float = 1.0) -> DensityVolume:
    """Centred solid sphere in an ``n^3`` grid."""
    z, y, x = np.meshgrid(*_centred_grid((n, n, n)), indexing="ij")
    return DensityVolume(value * ((x**2 + y**2 + z**2) <= radius**2))


def cylinder(depth: int, height: int, width: int, radius: float, value: float = 1.0) -> DensityVolume:
    """Solid cylinder whose axis is the row (tilt) axis."""
    z, _, x = np.meshgrid(*_centred_grid((depth, height, width)), indexing="ij")
    return DensityVolume(value * ((x**2 + z**2) <= radius**2))


def scattered_particles(
    shape, n_particles: int = 30, radius_range=(2.0, 5.0), seed: int = 0, margin: float = 0.0
) -> DensityVolume:
    """Randomly placed soft spheres, kept inside the cylinder inscribed in the x-z plane."""
    rng = np.random.default_rng(seed)
    D, H, W = shape
    grid = np.meshgrid(*_centred_grid(shape), indexing="ij")
    vol = np.zeros(shape)
    reach = 0.5 * min(D, W) - margin
    for _ in range(n_particles):
        r = rng.uniform(*radius_range)
        while True:
            cz, cx = rng.uniform(-reach + r, reach - r, size=2)
            if cz**2 + cx**2 <= (reach - r) ** 2:
                break
        cy = rng.uniform(-(H / 2) + r, H / 2 - r)
        d2 = (grid[0] - cz) ** 2 + (grid[1] - cy) ** 2 + (grid[2] - cx) ** 2
        vol += rng.uniform(0.5, 1.5) * np.clip(1.0 - np.sqrt(d2) / r, 0.0, None)
    return DensityVolume(vol)
