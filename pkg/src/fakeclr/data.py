"""Synthetic 2-D datasets drawn as nested subsets of fixed sample pools."""

from __future__ import annotations

import functools
import zlib

import numpy as np

from .numerics import InvalidParameterError, make_rng

POOL_SIZE = 100_000
COMPONENT_STD = 0.05
RING_RADIUS = 2.0
RING_MODES = 8


def component_means(kind: str) -> np.ndarray:
    if kind == "ring":
        angles = 2 * np.pi * np.arange(RING_MODES) / RING_MODES
        return RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if kind == "grid":
        ticks = np.linspace(-2.0, 2.0, 5)
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)
    raise InvalidParameterError(f"{kind!r} has no mixture components")


@functools.lru_cache(maxsize=None)
def pool(kind: str) -> np.ndarray:
    """The fixed sample pool for ``kind``; independent of any run seed."""
    rng = make_rng(zlib.crc32(kind.encode()))
    if kind in ("ring", "grid"):
        means = component_means(kind)
        comp = rng.integers(0, len(means), size=POOL_SIZE)
        pts = means[comp] + rng.normal(0.0, COMPONENT_STD, size=(POOL_SIZE, 2))
    elif kind == "spiral":
        t = np.sqrt(rng.uniform(0.0, 1.0, size=POOL_SIZE))
        arm = rng.integers(0, 2, size=POOL_SIZE)
        theta = 3 * np.pi * t + np.pi * arm
        r = 2.0 * t
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts = pts + rng.normal(0.0, COMPONENT_STD, size=(POOL_SIZE, 2))
    else:
        raise InvalidParameterError(f"unknown dataset kind {kind!r}")
    pts.setflags(write=False)
    return pts


@functools.lru_cache(maxsize=None)
def _order(kind: str, seed: int) -> np.ndarray:
    return make_rng(zlib.crc32(kind.encode()), seed).permutation(POOL_SIZE)


def make_dataset(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """First ``n`` points of a seed-specific pool permutation, so smaller sets nest in larger ones."""
    if n < 2:
        raise InvalidParameterError("n must be at least 2")
    if n > POOL_SIZE:
        raise InvalidParameterError(f"n={n} exceeds the pool size {POOL_SIZE}")
    return pool(kind)[_order(kind, seed)[:n]].copy()


def reference_set(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """The last ``n`` points of the same permutation.

    Disjoint from ``make_dataset(kind, m, seed)`` whenever ``m + n <= POOL_SIZE``.
    """
    return pool(kind)[_order(kind, seed)[-n:]].copy()


def parse_dataset_spec(spec: str) -> tuple[str, int, int]:
    """``ring-100`` or ``ring-100-3`` -> (kind, n, seed)."""
    parts = spec.split("-")
    if len(parts) not in (2, 3):
        raise InvalidParameterError(f"dataset spec must look like kind-n[-seed], got {spec!r}")
    kind, n = parts[0], int(parts[1])
    seed = int(parts[2]) if len(parts) == 3 else 0
    return kind, n, seed
