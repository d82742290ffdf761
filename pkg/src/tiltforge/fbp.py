"""Weighted filtered back-projection.

The reconstruction filter is a product of three optional factors on the
DC-centred integer frequency grid: an anisotropic Gaussian window, a ramp
along the x-frequency axis that flattens (or cuts) above the Crowther
frequency, and a circular low-pass.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    DTYPE,
    DensityVolume,
    InvalidSpec,
    ProjectionStack,
    ShapeMismatch,
    TiltGeometry,
    ValidationError,
    validate_stack,
)

__all__ = [
    "FilterSpec",
    "build_filter",
    "filter_projections",
    "backproject",
    "backprojection_operator",
    "filter_padded",
    "reconstruct",
]

REFERENCE_WIDTH = 512


@dataclass(frozen=True)
class FilterSpec:
    """Parameters of the composite reconstruction filter.

    Widths and radii are in frequency-grid pixels; ``crowther_fraction`` is
    a fraction of Nyquist.  ``crowther_mode`` is ``"flat"`` (ramp holds its
    value above the Crowther frequency) or ``"zero"`` (ramp is cut there).
    """

    gaussian_sigma_x: float = 174.0
    gaussian_sigma_y: float = 102.0
    crowther_fraction: float = 0.61
    radius_cutoff: float = 256.0
    use_gaussian: bool = True
    use_ramp: bool = True
    use_circle: bool = True
    crowther_mode: str = "flat"

    def __post_init__(self):
        if self.use_gaussian and not (self.gaussian_sigma_x > 0 and self.gaussian_sigma_y > 0):
            raise InvalidSpec("Gaussian widths must be positive")
        if self.use_ramp and not (0 < self.crowther_fraction <= 1):
            raise InvalidSpec("crowther_fraction must lie in (0, 1]")
        if self.use_circle and not self.radius_cutoff > 0:
            raise InvalidSpec("radius_cutoff must be positive")
        if self.crowther_mode not in ("flat", "zero"):
            raise InvalidSpec(f"unknown crowther_mode {self.crowther_mode!r}")

    @classmethod
    def ramp_only(cls, crowther_fraction: float = 1.0) -> "FilterSpec":
        return cls(crowther_fraction=crowther_fraction, use_gaussian=False, use_circle=False)

    def scaled_to(self, h: int, w: int, reference: int = REFERENCE_WIDTH) -> "FilterSpec":
        """Rescale pixel-valued parameters from a ``reference``-wide grid."""
        fx, fy = w / reference, h / reference
        return FilterSpec(
            gaussian_sigma_x=self.gaussian_sigma_x * fx,
            gaussian_sigma_y=self.gaussian_sigma_y * fy,
            crowther_fraction=self.crowther_fraction,
            radius_cutoff=self.radius_cutoff * fx,
            use_gaussian=self.use_gaussian,
            use_ramp=self.use_ramp,
            use_circle=self.use_circle,
            crowther_mode=self.crowther_mode,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _centred_offsets(n: int) -> np.ndarray:
    # index n//2 is DC, matching np.fft.fftshift
    return np.arange(n) - n // 2


def build_filter(
    h: int, w: int, spec: FilterSpec = FilterSpec(), x_oversample: float = 1.0
) -> np.ndarray:
    """Return the ``h x w`` DC-centred filter (DC at ``[h//2, w//2]``).

    ``x_oversample > 1`` evaluates the filter of a ``w / x_oversample`` wide
    grid on the finer frequency sampling of a zero-padded row.
    """
    if h < 1 or w < 1:
        raise InvalidSpec(f"filter grid must be non-empty, got {h}x{w}")
    fy = _centred_offsets(h).astype(np.float64)[:, None]
    fx = _centred_offsets(w).astype(np.float64)[None, :] / x_oversample
    w = w / x_oversample
    filt = np.ones((fy.size, fx.size))
    if spec.use_gaussian:
        filt = filt * np.exp(
            -(fx**2 / (2 * spec.gaussian_sigma_x**2) + fy**2 / (2 * spec.gaussian_sigma_y**2))
        )
    if spec.use_ramp:
        fc = spec.crowther_fraction * (w / 2.0)
        ax = np.abs(fx)
        if spec.crowther_mode == "flat":
            ramp = np.minimum(ax, fc) / fc
        else:
            ramp = np.where(ax <= fc, ax / fc, 0.0)
        filt = filt * ramp
    if spec.use_circle:
        filt = filt * (np.sqrt(fx**2 + fy**2) <= spec.radius_cutoff)
    return filt


def filter_projections(stack: ProjectionStack, filt: np.ndarray, threads: int = 1) -> ProjectionStack:
    """Multiply every tilt's spectrum by the DC-centred ``filt``."""
    T, H, W = stack.shape
    filt = np.asarray(filt, dtype=np.float64)
    if filt.shape != (H, W):
        raise ShapeMismatch(f"filter shape {filt.shape} does not match images {(H, W)}")
    unshifted = np.fft.ifftshift(filt)

    def one(img):
        spec = np.fft.fft2(img.astype(np.float64))
        return np.fft.ifft2(spec * unshifted).real.astype(DTYPE)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(one, stack.data))
    else:
        images = [one(img) for img in stack.data]
    return stack.with_data(np.stack(images) if images else stack.data.copy())


def backprojection_operator(angle_deg: float, depth: int, width: int):
    """Sparse ``(depth * width) x width`` operator smearing one detector row.

    Voxel ``(z, x)`` receives the linearly interpolated detector value at
    ``s = cx + (x - cx) cos(t) - (z - cz) sin(t)``; samples beyond the
    detector fade to zero over one pixel.
    """
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    cx = (width - 1) / 2.0
    cz = (depth - 1) / 2.0
    z, x = np.mgrid[0:depth, 0:width].astype(np.float64)
    pos = (cx + (x - cx) * c - (z - cz) * s).ravel()
    i0 = np.floor(pos)
    f = pos - i0
    i0 = i0.astype(np.int64)
    vox = np.arange(pos.size)
    rows, cols, vals = [], [], []
    for di, w in ((0, 1 - f), (1, f)):
        idx = i0 + di
        keep = (idx >= 0) & (idx < width) & (w != 0)
        rows.append(vox[keep])
        cols.append(idx[keep])
        vals.append(w[keep])
    B = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(depth * width, width),
    )
    return B


def backproject(
    stack: ProjectionStack,
    geometry: TiltGeometry | None = None,
    depth: int | None = None,
    weighted: bool = True,
    threads: int = 1,
) -> DensityVolume:
    """Back-project a (filtered) stack into a ``depth x H x W`` volume.

    With ``weighted`` the sum over tilts is scaled by ``pi / (2 T)``.  Work
    is split into row slabs, each summing tilts in acquisition order, so the
    result does not depend on ``threads``.
    """
    geometry = stack.geometry if geometry is None else geometry
    stack = ProjectionStack(stack.data, geometry)
    validate_stack(stack)
    T, H, W = stack.shape
    depth = W if depth is None else int(depth)
    if depth < 1:
        raise ValidationError(f"depth must be at least 1, got {depth}")
    ops = [backprojection_operator(a, depth, W) for a in geometry.angles_deg]
    # (T, W, H): detector column major so each op multiplies a (W, rows) block
    proj = np.ascontiguousarray(stack.data.transpose(0, 2, 1), dtype=np.float64)
    out = np.zeros((depth * W, H))

    def slab(rows):
        acc = np.zeros((depth * W, rows.stop - rows.start))
        for B, p in zip(ops, proj):
            acc += B @ p[:, rows]
        out[:, rows] = acc

    n_slabs = max(1, min(int(threads), H))
    bounds = np.linspace(0, H, n_slabs + 1).astype(int)
    slabs = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(slab, slabs))
    else:
        for rows in slabs:
            slab(rows)
    if weighted:
        out *= np.pi / (2 * T)
    vol = out.reshape(depth, W, H).transpose(0, 2, 1)
    return DensityVolume(vol.astype(DTYPE))


def filter_padded(
    stack: ProjectionStack, spec: FilterSpec, pad_factor: int = 2, threads: int = 1
) -> ProjectionStack:
    """Filter with the detector rows zero-padded to ``pad_factor * W``.

    Padding suppresses the wrap-around of the ramp kernel's negative tails.
    The filter is sampled more finely along x so that it addresses the same
    spatial frequencies as on the unpadded grid.
    """
    T, H, W = stack.shape
    if pad_factor <= 1:
        return filter_projections(stack, build_filter(H, W, spec), threads=threads)
    Wp = int(pad_factor * W)
    left = (Wp - W) // 2
    padded = np.zeros((T, H, Wp), dtype=DTYPE)
    padded[:, :, left : left + W] = stack.data
    filt = build_filter(H, Wp, spec, x_oversample=Wp / W)
    out = filter_projections(stack.with_data(padded), filt, threads=threads)
    return stack.with_data(out.data[:, :, left : left + W])


def reconstruct(
    stack: ProjectionStack,
    spec: FilterSpec = FilterSpec(),
    depth: int | None = None,
    pad_factor: int = 2,
    threads: int = 1,
) -> DensityVolume:
    """Filter with ``spec`` (on a zero-padded grid) then back-project."""
    filtered = filter_padded(stack, spec, pad_factor=pad_factor, threads=threads)
    return backproject(filtered, depth=depth, threads=threads)
