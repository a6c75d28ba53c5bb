"""Two-point statistics of categorical grids.

Grids are indexed ``[y, x]`` in 2D and ``[z, y, x]`` in 3D.  Pair counting is
non-periodic: a lag ``h`` along a direction pairs every cell with the cell
``h`` steps further along it, and pairs leaving the grid are dropped.
Diagonal lags move one cell along both axes of their plane per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "DIRECTIONS",
    "DirectionalCurve",
    "direction_offset",
    "facies_fractions",
    "two_point_probability",
    "label_components",
    "connectivity_function",
    "ensemble_band",
    "default_max_lag",
]

# unit offsets, last axis is x
DIRECTIONS = {
    2: {"x": (0, 1), "y": (1, 0), "d_xy": (1, 1)},
    3: {
        "x": (0, 0, 1),
        "y": (0, 1, 0),
        "z": (1, 0, 0),
        "d_xy": (0, 1, 1),
        "d_xz": (1, 0, 1),
        "d_yz": (1, 1, 0),
    },
}


@dataclass
class DirectionalCurve:
    facies: int
    direction: str
    values: np.ndarray  # indexed by lag 0..L
    kind: str = "PF"

    @property
    def lags(self) -> np.ndarray:
        return np.arange(len(self.values))


def direction_offset(direction: str, ndim: int) -> tuple[int, ...]:
    try:
        return DIRECTIONS[ndim][direction]
    except KeyError:
        raise ValueError(f"direction {direction!r} is not defined for {ndim}D grids") from None


def default_max_lag(shape, direction: str) -> int:
    off = direction_offset(direction, len(shape))
    return min(n for n, o in zip(shape, off) if o) // 2


def facies_fractions(grid, n_facies: int | None = None) -> np.ndarray:
    grid = np.asarray(grid)
    n = int(grid.max()) + 1 if n_facies is None else n_facies
    return np.bincount(grid.ravel(), minlength=n)[:n] / grid.size


def _pair_views(a, off, h):
    lo = tuple(slice(0, n - o * h) for n, o in zip(a.shape, off))
    hi = tuple(slice(o * h, n) for n, o in zip(a.shape, off))
    return a[lo], a[hi]


def _check_lag(shape, off, max_lag):
    limit = min(n for n, o in zip(shape, off) if o)
    if not 0 <= max_lag < limit:
        raise ValueError(f"max_lag {max_lag} must be < {limit} along this direction")


def two_point_probability(grid, facies: int, direction: str, max_lag: int | None = None) -> DirectionalCurve:
    """Fraction of lag-``h`` pairs with both cells in ``facies``, for ``h = 0..max_lag``."""
    grid = np.asarray(grid)
    off = direction_offset(direction, grid.ndim)
    if max_lag is None:
        max_lag = default_max_lag(grid.shape, direction)
    _check_lag(grid.shape, off, max_lag)
    ind = grid == facies
    vals = np.empty(max_lag + 1)
    for h in range(max_lag + 1):
        a, b = _pair_views(ind, off, h)
        vals[h] = np.count_nonzero(a & b) / a.size
    return DirectionalCurve(facies, direction, vals, "PF")


def label_components(grid, facies: int) -> np.ndarray:
    """Face-connected components of ``grid == facies``, labelled 1..C (0 outside the phase)."""
    grid = np.asarray(grid)
    structure = ndimage.generate_binary_structure(grid.ndim, 1)
    labels, _ = ndimage.label(grid == facies, structure=structure)
    return labels


def connectivity_function(grid, facies: int, direction: str, max_lag: int | None = None,
                          labels=None) -> DirectionalCurve:
    """Fraction of lag-``h`` pairs lying in the same connected ``facies`` component."""
    grid = np.asarray(grid)
    off = direction_offset(direction, grid.ndim)
    if max_lag is None:
        max_lag = default_max_lag(grid.shape, direction)
    _check_lag(grid.shape, off, max_lag)
    if labels is None:
        labels = label_components(grid, facies)
    vals = np.empty(max_lag + 1)
    for h in range(max_lag + 1):
        a, b = _pair_views(labels, off, h)
        vals[h] = np.count_nonzero((a == b) & (a > 0)) / a.size
    return DirectionalCurve(facies, direction, vals, "CF")


def ensemble_band(curves) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise mean, minimum and maximum of a set of like curves."""
    curves = list(curves)
    if not curves:
        raise ValueError("no curves given")
    ref = curves[0]
    for c in curves[1:]:
        if (c.facies, c.direction, c.kind, len(c.values)) != (ref.facies, ref.direction, ref.kind, len(ref.values)):
            raise ValueError("curves differ in facies, direction, kind or lag count")
    stack = np.stack([c.values for c in curves])
    return stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0)
