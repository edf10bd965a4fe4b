"""Latent perturbation and 2-D data augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import InvalidParameterError, Rng, Tensor

PERTURBATION_MODES = ("fixed", "noise_related", "negative_prior")
NEGATIVE_PRIOR_FLOOR = 0.1

# maps (a, b) -> (-b, a), a quarter turn
_QUARTER_TURN = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass
class PerturbationConfig:
    # None resolves from the strategy variant
    mode: Optional[str] = None
    l1: float = 0.1
    sigma_fixed: float = 0.1

    def __post_init__(self):
        if self.mode is not None and self.mode not in PERTURBATION_MODES:
            raise InvalidParameterError(f"unknown perturbation mode {self.mode!r}")
        if self.l1 < 0 or self.sigma_fixed < 0:
            raise InvalidParameterError("perturbation scales must be non-negative")


@dataclass
class AugmentationConfig:
    jitter_std: float = 0.02
    rotation_max: float = 0.1
    enabled: bool = True
    # also augment discriminator inputs in the adversarial loss
    adversarial: bool = True

    def __post_init__(self):
        if self.jitter_std < 0:
            raise InvalidParameterError("jitter_std must be non-negative")
        if not 0 <= self.rotation_max <= np.pi:
            raise InvalidParameterError("rotation_max must lie in [0, pi]")


def perturbation_scale(z: np.ndarray, cfg: PerturbationConfig, mode: str | None = None) -> np.ndarray:
    """Per-coordinate standard deviation of the latent perturbation."""
    mode = mode or cfg.mode or "fixed"
    z = np.asarray(z, dtype=np.float64)
    if mode == "fixed":
        return np.full_like(z, cfg.sigma_fixed)
    if mode == "noise_related":
        return cfg.l1 * np.abs(z)
    if mode == "negative_prior":
        return cfg.l1 / np.maximum(np.abs(z), NEGATIVE_PRIOR_FLOOR)
    raise InvalidParameterError(f"unknown perturbation mode {mode!r}")


def perturb_latent(z, cfg: PerturbationConfig, rng: Rng, mode: str | None = None) -> np.ndarray:
    """Return ``z + s * u`` with ``u`` standard normal and ``s`` from :func:`perturbation_scale`.

    One normal draw is consumed per coordinate whatever the mode, so the
    stream position does not depend on the scales.
    """
    z = np.asarray(z, dtype=np.float64)
    u = rng.standard_normal(z.shape)
    return z + perturbation_scale(z, cfg, mode) * u


def augment_data(x, cfg: AugmentationConfig, rng: Rng):
    """Rotate each point about the batch mean by a random angle, then jitter.

    Accepts a plain array or a :class:`Tensor`; for tensors the transform is
    built from differentiable ops so gradients reach ``x``.  The rotation
    centre is treated as a constant.
    """
    if not cfg.enabled or (cfg.jitter_std == 0 and cfg.rotation_max == 0):
        return x
    values = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    n = values.shape[0]
    theta = rng.uniform(-cfg.rotation_max, cfg.rotation_max, size=(n, 1))
    noise = rng.normal(0.0, cfg.jitter_std, size=(n, 2)) if cfg.jitter_std > 0 else np.zeros((n, 2))
    centre = values.mean(axis=0)
    d = x - centre
    return d * np.cos(theta) + (d @ _QUARTER_TURN) * np.sin(theta) + (centre + noise)
