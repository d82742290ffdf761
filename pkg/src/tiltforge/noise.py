"""Tilt-dependent moment matching and additive Gaussian noise.

Two simulators live here.  ``simulate_baseline`` shifts/scales every tilt to
training-set moments, adds white noise of one global sigma and re-matches
the moments.  ``simulate_noisy`` does the same with a sigma that follows a
quadratic law in the tilt angle, optionally attenuated by ``fraction``.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DTYPE,
    DegenerateTilt,
    EmptyTrainingSet,
    InsufficientPoints,
    NegativeSigma,
    PerTiltStats,
    ProjectionStack,
    ShapeMismatch,
    TiltGeometry,
    ValidationError,
    validate_stack,
)

__all__ = [
    "NoiseModel",
    "per_tilt_moments",
    "average_training_stats",
    "match_moments",
    "extract_noise_sigma",
    "fit_sigma_poly",
    "tilt_rng",
    "add_gaussian",
    "simulate_baseline",
    "simulate_noisy",
]


@dataclass(frozen=True)
class NoiseModel:
    """Per-tilt target moments plus a noise-sigma law.

    ``sigma_poly`` holds ``(a, b, c)`` of ``sigma(theta) = a theta^2 + b theta + c``
    with ``theta`` in degrees.  ``global_sigma`` is the constant used by the
    baseline simulator.
    """

    angles_deg: tuple
    target_stats: PerTiltStats
    sigma_poly: tuple = (0.0, 0.0, 0.0)
    global_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        object.__setattr__(self, "sigma_poly", tuple(float(v) for v in self.sigma_poly))
        if len(self.sigma_poly) != 3:
            raise ValidationError("sigma_poly needs exactly three coefficients")
        if len(self.target_stats) != len(self.angles_deg):
            raise ShapeMismatch("target stats and angles differ in length")
        if not self.global_sigma >= 0:
            raise NegativeSigma("global_sigma must be non-negative")
        sig = self.sigma_at(self.angles_deg)
        if np.any(sig < 0):
            bad = self.angles_deg[int(np.argmin(sig))]
            raise NegativeSigma(f"sigma law is negative at {bad} degrees")

    @property
    def geometry(self) -> TiltGeometry:
        return TiltGeometry(self.angles_deg)

    def sigma_at(self, angles_deg) -> np.ndarray:
        a, b, c = self.sigma_poly
        th = np.asarray(angles_deg, dtype=np.float64)
        return a * th**2 + b * th + c

    def to_dict(self) -> dict:
        a, b, c = self.sigma_poly
        return {
            "angles": list(self.angles_deg),
            "target_mean": list(self.target_stats.mean),
            "target_std": list(self.target_stats.std),
            "poly_a": a,
            "poly_b": b,
            "poly_c": c,
            "global_sigma": float(self.global_sigma),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        try:
            return cls(
                angles_deg=tuple(d["angles"]),
                target_stats=PerTiltStats(tuple(d["target_mean"]), tuple(d["target_std"])),
                sigma_poly=(d["poly_a"], d["poly_b"], d["poly_c"]),
                global_sigma=d["global_sigma"],
            )
        except KeyError as exc:
            raise ValidationError(f"noise model is missing key {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "NoiseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def per_tilt_moments(stack: ProjectionStack) -> PerTiltStats:
    """Mean and population std over all pixels of each tilt."""
    validate_stack(stack)
    flat = stack.data.reshape(stack.shape[0], -1)
    mean = flat.mean(axis=1, dtype=np.float64)
    std = flat.std(axis=1, dtype=np.float64)
    return PerTiltStats(tuple(mean), tuple(std))


def average_training_stats(stats_list) -> PerTiltStats:
    """Element-wise average of per-tilt statistics over training tomograms."""
    stats_list = list(stats_list)
    if not stats_list:
        raise EmptyTrainingSet("cannot average an empty training set")
    T = len(stats_list[0])
    if any(len(s) != T for s in stats_list):
        raise ShapeMismatch("training statistics differ in tilt count")
    mean = np.mean([s.mean for s in stats_list], axis=0)
    std = np.mean([s.std for s in stats_list], axis=0)
    return PerTiltStats(tuple(mean), tuple(std))


def match_moments(stack: ProjectionStack, target: PerTiltStats) -> ProjectionStack:
    """Affinely map each tilt onto the target mean and standard deviation."""
    validate_stack(stack)
    T = stack.shape[0]
    if len(target) != T:
        raise ShapeMismatch(f"target has {len(target)} tilts, stack has {T}")
    out = np.empty(stack.shape, dtype=DTYPE)
    for i, img in enumerate(stack.data):
        x = img.astype(np.float64)
        mu, sd = x.mean(), x.std()
        t_mu, t_sd = target.mean[i], target.std[i]
        if sd == 0:
            if t_sd > 0:
                raise DegenerateTilt(f"tilt {i} is constant but its target std is {t_sd}")
            out[i] = t_mu
            continue
        out[i] = (x - mu) * (t_sd / sd) + t_mu
    return stack.with_data(out)


def extract_noise_sigma(target_stack: ProjectionStack, noiseless_stack: ProjectionStack) -> list:
    """Per-tilt std of the residual between a noisy target and clean input.

    Each clean tilt is first aligned to the target by the least-squares
    affine map ``alpha * clean + beta``, so the residual measures noise rather
    than a difference of intensity scales.  Unlike matching the target's std,
    the fit does not absorb the noise power into the gain.
    """
    validate_stack(target_stack)
    validate_stack(noiseless_stack)
    if target_stack.shape != noiseless_stack.shape:
        raise ShapeMismatch(f"shapes differ: {target_stack.shape} vs {noiseless_stack.shape}")
    if target_stack.geometry != noiseless_stack.geometry:
        raise ShapeMismatch("target and noiseless stacks have different geometries")
    sigmas = []
    for t, c in zip(target_stack.data, noiseless_stack.data):
        t = t.astype(np.float64) - t.mean(dtype=np.float64)
        c = c.astype(np.float64) - c.mean(dtype=np.float64)
        cc = np.dot(c.ravel(), c.ravel())
        gain = np.dot(t.ravel(), c.ravel()) / cc if cc > 0 else 0.0
        sigmas.append(float((t - gain * c).std()))
    return sigmas


def fit_sigma_poly(angles_deg, sigmas_per_tomogram) -> tuple:
    """Least-squares quadratic through the tomogram-averaged per-tilt sigmas.

    Returns ``(a, b, c)`` with ``sigma ~ a theta^2 + b theta + c``.
    """
    angles = np.asarray(angles_deg, dtype=np.float64)
    sigmas = np.asarray(sigmas_per_tomogram, dtype=np.float64)
    if sigmas.size == 0:
        raise InsufficientPoints("no tomograms to fit")
    if sigmas.ndim == 1:
        sigmas = sigmas[None, :]
    if sigmas.shape[1] != angles.size:
        raise ShapeMismatch(f"{sigmas.shape[1]} sigmas per tomogram for {angles.size} angles")
    if np.unique(angles).size < 3:
        raise InsufficientPoints("a quadratic fit needs at least three distinct angles")
    mean_sigma = sigmas.mean(axis=0)
    # centre and scale theta for conditioning, then map back
    shift = angles.mean()
    scale = max(np.abs(angles - shift).max(), 1.0)
    u = (angles - shift) / scale
    design = np.stack([u**2, u, np.ones_like(u)], axis=1)
    (p2, p1, p0), *_ = np.linalg.lstsq(design, mean_sigma, rcond=None)
    a = p2 / scale**2
    b = p1 / scale - 2 * p2 * shift / scale**2
    c = p0 - p1 * shift / scale + p2 * shift**2 / scale**2
    return float(a), float(b), float(c)


def tilt_rng(seed: int, tilt_index: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed on ``(seed, tilt_index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(tilt_index)])))


def add_gaussian(
    stack: ProjectionStack, sigma_per_tilt, fraction: float = 1.0, seed: int = 0, threads: int = 1
) -> ProjectionStack:
    """Add ``N(0, (fraction * sigma_i)^2)`` noise to tilt ``i``."""
    validate_stack(stack)
    sigma = np.asarray(sigma_per_tilt, dtype=np.float64)
    if sigma.shape != (stack.shape[0],):
        raise ShapeMismatch(f"need {stack.shape[0]} sigmas, got {sigma.shape}")
    if np.any(sigma < 0):
        raise NegativeSigma(f"negative sigma at tilt {int(np.argmin(sigma))}")
    if not 0 <= fraction <= 1:
        raise ValidationError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0:
        return stack.with_data(stack.data.copy())

    def one(i):
        noise = tilt_rng(seed, i).standard_normal(stack.shape[1:])
        return (stack.data[i] + fraction * sigma[i] * noise).astype(DTYPE)

    idx = range(stack.shape[0])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(one, idx))
    else:
        images = [one(i) for i in idx]
    return stack.with_data(np.stack(images))


def _check_model(stack, model):
    validate_stack(stack)
    if len(model.angles_deg) != stack.shape[0]:
        raise ShapeMismatch(f"noise model has {len(model.angles_deg)} tilts, stack has {stack.shape[0]}")


def simulate_baseline(
    noiseless: ProjectionStack, model: NoiseModel, seed: int, threads: int = 1
) -> ProjectionStack:
    """Moment match, add global white noise, moment match again."""
    _check_model(noiseless, model)
    shaped = match_moments(noiseless, model.target_stats)
    sigma = np.full(noiseless.shape[0], model.global_sigma)
    noisy = add_gaussian(shaped, sigma, 1.0, seed, threads=threads)
    return match_moments(noisy, model.target_stats)


def noisy_intermediate(
    noiseless: ProjectionStack, model: NoiseModel, fraction: float, seed: int, threads: int = 1
) -> tuple:
    """Moment-matched input and the same after tilt-dependent noise."""
    _check_model(noiseless, model)
    shaped = match_moments(noiseless, model.target_stats)
    sigma = model.sigma_at(noiseless.geometry.angles_deg)
    return shaped, add_gaussian(shaped, sigma, fraction, seed, threads=threads)


def simulate_noisy(
    noiseless: ProjectionStack, model: NoiseModel, fraction: float = 1.0, seed: int = 0, threads: int = 1
) -> ProjectionStack:
    """Moment match, add noise with sigma from the quadratic law, re-match."""
    _, noisy = noisy_intermediate(noiseless, model, fraction, seed, threads=threads)
    return match_moments(noisy, model.target_stats)
