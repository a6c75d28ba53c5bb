"""Realization generation from a trained generator and post-processing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .convnet import NetworkParams, generator_forward

__all__ = [
    "PostprocessSpec",
    "sample_latent",
    "median_filter",
    "threshold",
    "rank_transform",
    "crop_center",
    "to_unit",
    "generate",
]

BINARY_THRESHOLDS = (0.5,)
TERNARY_THRESHOLDS = (0.33, 0.67)


@dataclass(frozen=True)
class PostprocessSpec:
    """How raw generator output becomes a facies grid.

    ``thresholds=None`` together with ``rank_values=None`` returns the
    continuous ``[0, 1]`` field.
    """

    median_kernel: tuple | None = None
    thresholds: tuple | None = BINARY_THRESHOLDS
    crop: tuple | None = None
    rank_values: tuple | None = None

    def __post_init__(self):
        if self.thresholds is not None:
            t = np.asarray(self.thresholds, dtype=float)
            if t.size == 0 or np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
                raise ValueError(f"thresholds must be strictly increasing in (0, 1): {self.thresholds}")
        if self.median_kernel is not None and any(k % 2 == 0 for k in self.median_kernel):
            raise ValueError(f"median kernel extents must be odd: {self.median_kernel}")

    @property
    def n_facies(self) -> int | None:
        return None if self.thresholds is None else len(self.thresholds) + 1


def sample_latent(shape, seed) -> np.ndarray:
    """I.i.d. ``U(-1, 1)`` latent field of the given shape ``(q, *spatial)``."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=tuple(shape))


def median_filter(grid, kernel) -> np.ndarray:
    """Neighbourhood median with mirrored borders (edge cell repeated)."""
    kernel = tuple(int(k) for k in kernel)
    if any(k % 2 == 0 for k in kernel):
        raise ValueError(f"median kernel extents must be odd: {kernel}")
    grid = np.asarray(grid, dtype=np.float64)
    if len(kernel) != grid.ndim:
        raise ValueError(f"kernel {kernel} does not match grid dimensionality {grid.ndim}")
    return ndimage.median_filter(grid, size=kernel, mode="reflect")


def threshold(grid, thresholds=BINARY_THRESHOLDS) -> np.ndarray:
    """Facies code = number of thresholds strictly below the value (ties go to the lower facies)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
        raise ValueError("threshold expects values in [0, 1]")
    return np.searchsorted(np.asarray(thresholds, dtype=float), grid, side="left").astype(np.int64)


def rank_transform(grid, ti_values) -> np.ndarray:
    """Replace each value by the training value of equal relative rank.

    Ties in ``grid`` are broken by row-major position.
    """
    values = np.sort(np.asarray(ti_values, dtype=np.float64).ravel())
    if values.size == 0:
        raise ValueError("ti_values must be non-empty")
    grid = np.asarray(grid, dtype=np.float64)
    flat = grid.ravel()
    n = flat.size
    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(flat, kind="stable")] = np.arange(n)
    if n == 1:
        idx = np.zeros(1, dtype=np.int64)
    else:
        idx = (ranks * (values.size - 1)) // (n - 1)
    return values[idx].reshape(grid.shape)


def crop_center(grid, target) -> np.ndarray:
    grid = np.asarray(grid)
    target = tuple(int(t) for t in target)
    if len(target) != grid.ndim:
        raise ValueError(f"crop {target} does not match grid dimensionality {grid.ndim}")
    for ax, (n, t) in enumerate(zip(grid.shape, target)):
        if not 1 <= t <= n:
            raise ValueError(f"crop extent {t} invalid for axis {ax} of extent {n}")
    return grid[tuple(slice((n - t) // 2, (n - t) // 2 + t) for n, t in zip(grid.shape, target))]


def to_unit(x) -> np.ndarray:
    """Map tanh output from ``[-1, 1]`` to ``[0, 1]``."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def generate(params: NetworkParams, Z, post: PostprocessSpec = PostprocessSpec()) -> np.ndarray:
    """Generator output -> [0, 1] -> median filter -> threshold or rank transform -> centre crop."""
    out = generator_forward(np.asarray(Z, dtype=np.float64), params)[0]
    if post.crop is not None:
        # validate before the expensive steps
        crop_center(np.empty(out.shape, dtype=bool), post.crop)
    x = to_unit(out)
    if post.median_kernel is not None:
        x = median_filter(x, post.median_kernel)
    if post.rank_values is not None:
        x = rank_transform(x, post.rank_values)
    elif post.thresholds is not None:
        x = threshold(x, post.thresholds)
    if post.crop is not None:
        x = crop_center(x, post.crop)
    return x
