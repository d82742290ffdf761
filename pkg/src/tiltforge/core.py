"""Shared containers, validation and error types.

Array layout is fixed for the whole package: projection stacks are
``(tilt, row, column)`` and volumes are ``(depth, row, column)``.  The tilt
axis is the row (y) axis.  Data is stored as float32; reductions accumulate
in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32


class TiltforgeError(Exception):
    """Base class for all package errors."""


class ValidationError(TiltforgeError, ValueError):
    """Input violates a documented invariant."""


class ShapeMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class InvalidRange(ValidationError):
    pass


class OddDimension(ValidationError):
    pass


class DegenerateTilt(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class InsufficientPoints(ValidationError):
    pass


class NegativeSigma(ValidationError):
    pass


class ShapeTooSmall(ValidationError):
    pass


class MissingTarget(ValidationError):
    pass


class InconsistentChannels(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class GeometryMismatch(ValidationError):
    pass


class PairingMismatch(ValidationError):
    pass


class MissingStyle(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class FormatError(TiltforgeError):
    """A file does not follow its binary format."""


class TruncatedFile(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


def _first_nonfinite(data):
    bad = np.argwhere(~np.isfinite(data))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


@dataclass(frozen=True)
class TiltGeometry:
    """Ordered tilt angles (degrees) of an acquisition arc."""

    angles_deg: tuple

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles_deg)
        object.__setattr__(self, "angles_deg", angles)
        if len(angles) < 1:
            raise InvalidRange("a tilt geometry needs at least one angle")
        if any(not np.isfinite(a) or a < -90.0 or a > 90.0 for a in angles):
            raise InvalidRange("tilt angles must lie in [-90, 90] degrees")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise InvalidRange("tilt angles must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.angles_deg)

    def __len__(self):
        return len(self.angles_deg)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.angles_deg, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ProjectionStack:
    """A ``T x H x W`` tilt-series together with its geometry."""

    data: np.ndarray
    geometry: TiltGeometry

    def __post_init__(self):
        data = np.asarray(self.data, dtype=DTYPE)
        if data.ndim != 3:
            raise ShapeMismatch(f"projection data must be 3-D, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data) -> "ProjectionStack":
        return ProjectionStack(data, self.geometry)


@dataclass(frozen=True, eq=False)
class DensityVolume:
    """A ``D x H x W`` density grid."""

    data: np.ndarray
    voxel_size_nm: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=DTYPE)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatch(f"volume must be a non-empty 3-D array, got shape {data.shape}")
        if not self.voxel_size_nm > 0:
            raise ValidationError("voxel_size_nm must be positive")
        idx = _first_nonfinite(data)
        if idx is not None:
            raise NonFiniteValue(f"non-finite density at index {idx}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class PerTiltStats:
    """Per-tilt mean and (population) standard deviation."""

    mean: tuple
    std: tuple = field(default=())

    def __post_init__(self):
        mean = tuple(float(m) for m in self.mean)
        std = tuple(float(s) for s in self.std)
        if len(mean) != len(std):
            raise ShapeMismatch("mean and std must have equal length")
        if any(s < 0 or not np.isfinite(s) for s in std):
            raise ValidationError("standard deviations must be finite and non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def __len__(self):
        return len(self.mean)


def validate_stack(stack: ProjectionStack) -> None:
    """Raise if ``stack`` breaks the projection-stack invariants."""
    if stack.data.shape[0] != stack.geometry.T:
        raise ShapeMismatch(
            f"stack has {stack.data.shape[0]} tilts but geometry has {stack.geometry.T} angles"
        )
    idx = _first_nonfinite(stack.data)
    if idx is not None:
        raise NonFiniteValue(f"non-finite value at index {idx}")


def evenly_spaced_geometry(min_deg: float, max_deg: float, count: int) -> TiltGeometry:
    """Linearly spaced tilt angles including both endpoints.

    >>> evenly_spaced_geometry(0, 10, 3).angles_deg
    (0.0, 5.0, 10.0)
    """
    if not min_deg < max_deg:
        raise InvalidRange(f"need min < max, got {min_deg} >= {max_deg}")
    if int(count) != count or count < 2:
        raise InvalidRange(f"need at least two tilts, got {count}")
    count = int(count)
    step = (max_deg - min_deg) / (count - 1)
    mid = 0.5 * (min_deg + max_deg)
    angles = [mid + (i - 0.5 * (count - 1)) * step for i in range(count)]
    angles[0], angles[-1] = float(min_deg), float(max_deg)
    return TiltGeometry(tuple(angles))
