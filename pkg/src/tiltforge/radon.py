"""Forward projection of density volumes into tilt-series, and 2x binning.

Each x-z slice of the volume (one per row) is rotated about its centre
``((W - 1) / 2, (D - 1) / 2)`` by inverse mapping with bilinear
interpolation, then summed along depth with unit steps.  Because every row
shares the same slice geometry, the rotate-and-sum operator of one angle is
assembled once as a sparse ``W x (D * W)`` matrix and applied to all rows
at once.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    DTYPE,
    DensityVolume,
    OddDimension,
    ProjectionStack,
    ShapeMismatch,
    TiltGeometry,
    ValidationError,
)

__all__ = ["ProjectionConfig", "forward_project", "bin2x", "ray_steps", "projection_operator"]


@dataclass(frozen=True)
class ProjectionConfig:
    """Options of :func:`forward_project`.

    negate : flip the sign after projection so dense matter is dark.
    pad_value : density assumed outside the grid (0 is vacuum).
    """

    negate: bool = True
    pad_value: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.pad_value):
            raise ValidationError("pad_value must be finite")


def ray_steps(depth: int, width: int) -> int:
    """Number of unit steps per ray.

    Long enough to cross the slice (plus the one-voxel interpolation margin)
    at any angle, and of the same parity as ``depth`` so that at 0 degrees
    the samples fall exactly on voxel centres.
    """
    diag = np.hypot(depth + 2, width + 2)
    return int(depth + 2 * np.ceil(max(diag - depth, 0.0) / 2))


def _bilinear_entries(z, x, depth, width):
    """Sparse entries sampling a ``depth x width`` grid at points ``(z, x)``.

    Returns flat point indices, flat grid indices and weights of in-grid
    corners, plus the per-point weight that falls outside the grid.
    """
    z0 = np.floor(z)
    x0 = np.floor(x)
    fz = z - z0
    fx = x - x0
    z0 = z0.astype(np.int64)
    x0 = x0.astype(np.int64)
    pts = np.arange(z.size).reshape(z.shape)
    rows, cols, vals = [], [], []
    outside = np.zeros(z.shape)
    for dz, dx, w in (
        (0, 0, (1 - fz) * (1 - fx)),
        (0, 1, (1 - fz) * fx),
        (1, 0, fz * (1 - fx)),
        (1, 1, fz * fx),
    ):
        zi = z0 + dz
        xi = x0 + dx
        inside = (zi >= 0) & (zi < depth) & (xi >= 0) & (xi < width)
        keep = inside & (w != 0)
        rows.append(pts[keep])
        cols.append(zi[keep] * width + xi[keep])
        vals.append(w[keep])
        outside += np.where(inside, 0.0, w)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), outside


def projection_operator(angle_deg: float, depth: int, width: int):
    """Rotate-and-sum operator of one x-z slice at ``angle_deg``.

    Returns ``(A, outside)`` where ``A`` is a CSR matrix of shape
    ``(width, depth * width)`` acting on the row-major flattened slice and
    ``outside[u]`` is the total interpolation weight ray ``u`` spent outside
    the grid (multiplied by the pad value).
    """
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    cx = (width - 1) / 2.0
    cz = (depth - 1) / 2.0
    n = ray_steps(depth, width)
    t = np.arange(n) - (n - 1) / 2.0
    u = np.arange(width) - cx
    # grid is (detector column, step along the ray)
    uu, tt = np.meshgrid(u, t, indexing="ij")
    x = cx + uu * c + tt * s
    z = cz - uu * s + tt * c
    pts, cols, vals, outside = _bilinear_entries(z, x, depth, width)
    A = sp.csr_matrix((vals, (pts // n, cols)), shape=(width, depth * width))
    A.sum_duplicates()
    return A, outside.sum(axis=1)


def forward_project(
    volume: DensityVolume,
    geometry: TiltGeometry,
    config: ProjectionConfig = ProjectionConfig(),
    threads: int = 1,
) -> ProjectionStack:
    """Project ``volume`` at every angle of ``geometry``.

    Parameters
    ----------
    volume : DensityVolume
        ``D x H x W`` density; H is the tilt axis.
    geometry : TiltGeometry
        Tilt angles in degrees.
    config : ProjectionConfig
        Sign and padding convention.
    threads : int
        Worker threads; tilts are independent so output bytes do not depend
        on this value.

    Returns
    -------
    ProjectionStack
        ``T x H x W`` stack.
    """
    if not isinstance(volume, DensityVolume):
        raise ShapeMismatch("forward_project expects a DensityVolume")
    D, H, W = volume.shape
    # (D*W, H): column y is the flattened x-z slice of row y
    slices = np.ascontiguousarray(volume.data.transpose(0, 2, 1), dtype=np.float64).reshape(D * W, H)
    sign = -1.0 if config.negate else 1.0

    def one(angle):
        A, outside = projection_operator(angle, D, W)
        proj = A @ slices  # (W, H)
        if config.pad_value != 0:
            proj = proj + config.pad_value * outside[:, None]
        return (sign * proj.T).astype(DTYPE)

    angles = geometry.angles_deg
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(one, angles))
    else:
        images = [one(a) for a in angles]
    out = np.empty((len(angles), H, W), dtype=DTYPE)
    for i, img in enumerate(images):
        out[i] = img
    return ProjectionStack(out, geometry)


def bin2x(stack: ProjectionStack) -> ProjectionStack:
    """Average non-overlapping 2x2 blocks of every tilt image."""
    T, H, W = stack.shape
    if H % 2 or W % 2:
        raise OddDimension(f"2x binning needs even image dimensions, got {H}x{W}")
    blocks = stack.data.reshape(T, H // 2, 2, W // 2, 2)
    return stack.with_data(blocks.mean(axis=(2, 4), dtype=np.float64).astype(DTYPE))
