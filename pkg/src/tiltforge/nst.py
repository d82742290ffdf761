"""Per-tilt neural style transfer in projection space.

A working image starts at the noisy projection (not at random or at the
content image) and takes a few Adam steps on its pixels towards the content
features of a lightly-noised copy and the Gram statistics of a projection
from another tomogram at the same tilt angle.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import featnet
from .core import DTYPE, GeometryMismatch, ProjectionStack, ShapeMismatch, ValidationError, validate_stack
from .noise import NoiseModel, simulate_noisy

__all__ = [
    "NstConfig",
    "LossRecord",
    "standardize",
    "transfer_tilt",
    "transfer_stack",
    "precompute_style_targets",
    "build_faket",
    "format_telemetry",
]


@dataclass(frozen=True)
class NstConfig:
    alpha: float = 1.0
    beta: float = 1000.0
    learning_rate: float = 0.05
    iterations: int = 1
    content_noise_fraction: float = 0.25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be non-negative")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValidationError(f"iterations must be an integer >= 1, got {self.iterations}")
        if not 0 <= self.content_noise_fraction <= 1:
            raise ValidationError("content_noise_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class LossRecord:
    """Loss of one tilt after ``iteration`` updates (0 is the start)."""

    tilt: int
    iteration: int
    content: float
    style: float
    total: float


def standardize(img):
    """Return ``(z, mean, std)`` with ``z`` zero-mean and unit-std."""
    x = np.asarray(img, dtype=np.float64)
    mu, sd = x.mean(), x.std()
    if sd == 0:
        return x - mu, mu, 1.0
    return (x - mu) / sd, mu, sd


def _loss(net, image, c_target, s_targets, config, want_grad):
    lc, ls, gc, gs = featnet.loss_terms(net, image, c_target, s_targets, want_grad=want_grad)
    total = config.alpha * lc + config.beta * ls
    grad = None if not want_grad else config.alpha * gc + config.beta * gs
    return lc, ls, total, grad


def transfer_tilt(
    net,
    init_image,
    content_image,
    style_image,
    config: NstConfig = NstConfig(),
    style_targets=None,
    tilt: int = 0,
    return_history: bool = False,
):
    """Adapt one projection.

    Parameters
    ----------
    net : FeatureNet
        Feature extractor shared by all tilts.
    init_image, content_image, style_image : ndarray
        Images of identical shape.  Each is standardised on its own moments
        before entering the network.
    config : NstConfig
        Loss weights and Adam settings.
    style_targets : dict, optional
        Precomputed Gram targets of the standardised ``style_image``.
    tilt : int
        Index recorded in the loss history.
    return_history : bool
        Also return the list of :class:`LossRecord`.

    Returns
    -------
    ndarray or (ndarray, list)
        The adapted image, mapped back through the affine map that
        standardised ``init_image``.
    """
    init = np.asarray(init_image)
    if not (init.shape == np.shape(content_image) == np.shape(style_image)):
        raise ShapeMismatch("init, content and style images must share a shape")
    x, mu, sd = standardize(init)
    content, _, _ = standardize(content_image)
    c_target = featnet.content_target(net, content) if net.content_layer else None
    if style_targets is None:
        style_targets = featnet.style_targets(net, standardize(style_image)[0])

    m = np.zeros_like(x)
    v = np.zeros_like(x)
    history = []
    for it in range(1, config.iterations + 1):
        lc, ls, total, g = _loss(net, x, c_target, style_targets, config, True)
        history.append(LossRecord(tilt, it - 1, lc, ls, total))
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1**it)
        v_hat = v / (1 - config.beta2**it)
        x = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    if return_history:
        lc, ls, total, _ = _loss(net, x, c_target, style_targets, config, False)
        history.append(LossRecord(tilt, config.iterations, lc, ls, total))
    out = (x * sd + mu).astype(DTYPE)
    return (out, history) if return_history else out


def precompute_style_targets(net, style_stack: ProjectionStack) -> list:
    """Gram targets for every tilt of a style stack (reusable across runs)."""
    return [featnet.style_targets(net, standardize(img)[0]) for img in style_stack.data]


def transfer_stack(
    net,
    init_stack: ProjectionStack,
    content_stack: ProjectionStack,
    style_stack: ProjectionStack,
    config: NstConfig = NstConfig(),
    style_targets=None,
    threads: int = 1,
    return_history: bool = False,
):
    """Apply :func:`transfer_tilt` to every tilt; tilt ``i`` uses style tilt ``i``."""
    for s in (init_stack, content_stack, style_stack):
        validate_stack(s)
    if not (init_stack.shape == content_stack.shape == style_stack.shape):
        raise ShapeMismatch("init, content and style stacks must share a shape")
    if init_stack.geometry != content_stack.geometry or init_stack.geometry != style_stack.geometry:
        raise GeometryMismatch("stacks must pair tilt angles one-to-one")
    if style_targets is not None and len(style_targets) != style_stack.shape[0]:
        raise ShapeMismatch("one set of style targets per tilt is required")

    def one(i):
        targets = None if style_targets is None else style_targets[i]
        return transfer_tilt(
            net,
            init_stack.data[i],
            content_stack.data[i],
            style_stack.data[i],
            config,
            style_targets=targets,
            tilt=i,
            return_history=True,
        )

    idx = range(init_stack.shape[0])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, idx))
    else:
        results = [one(i) for i in idx]
    out = init_stack.with_data(np.stack([r[0] for r in results]))
    if return_history:
        return out, [rec for r in results for rec in r[1]]
    return out


def content_seed(seed: int) -> int:
    """Seed of the content stack's noise, derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), 1]).generate_state(1)[0])


def build_faket(
    noiseless: ProjectionStack,
    style_stack: ProjectionStack,
    model: NoiseModel,
    net,
    config: NstConfig = NstConfig(),
    seed: int | None = None,
    style_targets=None,
    threads: int = 1,
    return_history: bool = False,
):
    """Noisy initialisation, 25 %-noise content, then style transfer."""
    seed = config.seed if seed is None else seed
    init = simulate_noisy(noiseless, model, 1.0, seed, threads=threads)
    content = simulate_noisy(noiseless, model, config.content_noise_fraction, content_seed(seed), threads=threads)
    return transfer_stack(
        net, init, content, style_stack, config,
        style_targets=style_targets, threads=threads, return_history=return_history,
    )


def format_telemetry(history) -> str:
    """Tab-separated loss table, one row per tilt and iteration."""
    lines = ["tilt\titeration\tcontent_loss\tstyle_loss\ttotal_loss"]
    for r in history:
        lines.append(f"{r.tilt}\t{r.iteration}\t{r.content:.9g}\t{r.style:.9g}\t{r.total:.9g}")
    return "\n".join(lines) + "\n"
