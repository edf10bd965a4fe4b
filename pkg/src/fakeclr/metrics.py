"""Closed-form 2-D stand-ins for FID, KID, path length and memorisation probes.

All metrics work on raw plane coordinates.  Generators are duck-typed: they
need ``mapping(z)`` and ``synthesis(w)`` accepting arrays or tensors, plus
``z_dim``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .numerics import Rng, Tensor, no_grad


class InvalidInputError(ValueError):
    pass


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=1e-12):
            raise InvalidInputError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-10:
            raise InvalidInputError("covariance is not positive semi-definite")

    @classmethod
    def from_samples(cls, x) -> "GaussianSummary":
        x = np.asarray(x, dtype=np.float64)
        cov = np.cov(x, rowvar=False)
        return cls(x.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``.

    The trace of the product root is taken from the eigenvalues of the
    symmetric matrix ``S_a^{1/2} S_b S_a^{1/2}``, which shares its spectrum
    with ``S_a S_b``.
    """
    diff = a.mean - b.mean
    mean_term = float(diff @ diff)
    if np.array_equal(a.cov, b.cov):
        return mean_term
    root_a = _psd_sqrt(a.cov)
    mid = root_a @ b.cov @ root_a
    tr_root = np.sqrt(np.clip(np.linalg.eigvalsh(0.5 * (mid + mid.T)), 0.0, None)).sum()
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_root)
    if value < -1e-8:
        raise InvalidInputError(f"negative Frechet distance {value}")
    return max(value, 0.0)


def toy_fid(x, y) -> float:
    return frechet_distance(GaussianSummary.from_samples(x), GaussianSummary.from_samples(y))


def poly_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** 3


def mmd_poly(x, y) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel ``(a.b/d + 1)^3``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise InvalidInputError("mmd_poly needs at least two samples per batch")
    kxx = poly_kernel(x, x)
    kyy = poly_kernel(y, y)
    kxy = poly_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


# path length ---------------------------------------------------------------------


@dataclass
class PathLengthStats:
    mean: float
    std: float
    space: str


def _values(t) -> np.ndarray:
    return t.values if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def path_lengths(generator, space: str, n_paths: int, eps: float, rng: Rng,
                 endpoints: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Per-path squared output step divided by ``eps**2`` along random interpolations."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    if space not in ("z", "w"):
        raise InvalidInputError(f"space must be 'z' or 'w', got {space!r}")
    if endpoints is None:
        z1 = rng.standard_normal((n_paths, generator.z_dim))
        z2 = rng.standard_normal((n_paths, generator.z_dim))
    else:
        z1, z2 = (np.atleast_2d(np.asarray(e, dtype=np.float64)) for e in endpoints)
        n_paths = len(z1)
    t = rng.uniform(0.0, 1.0, size=(n_paths, 1))
    with no_grad():
        if space == "w":
            a, b = _values(generator.mapping(z1)), _values(generator.mapping(z2))
            synth = generator.synthesis
        else:
            a, b = z1, z2

            def synth(z):
                return generator.synthesis(generator.mapping(z))

        x0 = _values(synth(a + (b - a) * t))
        x1 = _values(synth(a + (b - a) * (t + eps)))
    return np.sum((x1 - x0) ** 2, axis=1) / eps ** 2


def path_length(generator, space: str, n_paths: int, eps: float, rng: Rng,
                endpoints=None) -> PathLengthStats:
    steps = path_lengths(generator, space, n_paths, eps, rng, endpoints)
    return PathLengthStats(float(steps.mean()), float(steps.std()), space)


# memorisation ----------------------------------------------------------------------


@dataclass
class NearestNeighborReport:
    distances: np.ndarray  # (n_generated, k), ascending per row
    indices: np.ndarray  # (n_generated, k) into the training set
    fraction_within: float
    delta: float

    @property
    def mean_nearest(self) -> float:
        return float(self.distances[:, 0].mean())


def nearest_neighbor_report(generated, train, k: int = 1, delta: float = 0.05) -> NearestNeighborReport:
    train = np.asarray(train, dtype=np.float64)
    generated = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    if len(train) == 0:
        raise InvalidInputError("training set is empty")
    k = min(k, len(train))
    dist, idx = cKDTree(train).query(generated, k=k)
    dist = dist.reshape(len(generated), k)
    idx = idx.reshape(len(generated), k)
    return NearestNeighborReport(dist, idx, float(np.mean(dist[:, 0] <= delta)), delta)


# inversion -----------------------------------------------------------------------


def invert(generator, x_target, steps: int, lr: float, rng: Rng, init=None):
    """Gradient descent on ``|G(z) - x_target|^2`` over the latent.

    Works row-wise on a batch of targets.  Returns the best latent seen for
    each target and its Euclidean residual.
    """
    if steps < 1:
        raise InvalidInputError("steps must be at least 1")
    target = np.atleast_2d(np.asarray(x_target, dtype=np.float64))
    n = len(target)
    z = (rng.standard_normal((n, generator.z_dim)) if init is None
         else np.atleast_2d(np.asarray(init, dtype=np.float64)).copy())

    def residual(zv):
        with no_grad():
            out = _values(generator.synthesis(generator.mapping(zv)))
        return np.linalg.norm(out - target, axis=1)

    best_z, best_r = z.copy(), residual(z)
    for _ in range(steps):
        zt = Tensor(z, requires_grad=True)
        diff = generator.synthesis(generator.mapping(zt)) - target
        (diff * diff).sum().backward()
        z = z - lr * zt.grad
        r = residual(z)
        better = r < best_r
        best_z[better], best_r[better] = z[better], r[better]
    if np.ndim(x_target) == 1:
        return best_z[0], float(best_r[0])
    return best_z, best_r
