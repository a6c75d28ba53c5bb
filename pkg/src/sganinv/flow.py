"""Steady-state confined groundwater flow on a 2D block-centred grid.

The conductivity grid is indexed ``[row, col]`` with columns along x.  The
first and last columns are constant-head cells whose heads follow the
imposed lateral gradient, so a homogeneous aquifer without wells gets an
exactly linear head field that reaches ``h_left`` on the left face and
``h_right`` on the right face.  Top and bottom rows are no-flow.
Inter-cell conductances use the harmonic mean of the adjacent
conductivities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

__all__ = [
    "FlowModel",
    "FlowError",
    "k_field_from_facies",
    "conductances",
    "solve_heads",
    "observe",
    "boundary_fluxes",
    "regular_lattice",
    "default_model",
]

RESIDUAL_TOL = 1e-10


class FlowError(RuntimeError):
    pass


@dataclass
class FlowModel:
    k: np.ndarray  # (nrow, ncol), m/s
    dx: float = 1.0
    dy: float = 1.0
    thickness: float = 1.0
    gradient: float = 0.01
    h_right: float = 0.0
    wells: list = field(default_factory=list)  # (row, col, rate m3/s; extraction < 0)
    observations: list = field(default_factory=list)  # (row, col)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if self.k.ndim != 2:
            raise ValueError("conductivity grid must be 2D")
        if self.k.shape[1] < 2:
            raise ValueError("need at least two columns for the fixed-head boundaries")
        if not np.all(self.k > 0):
            raise ValueError("conductivity must be positive everywhere")
        nr, nc = self.k.shape
        for r, c, *_ in list(self.wells) + list(self.observations):
            if not (0 <= r < nr and 0 <= c < nc):
                raise ValueError(f"cell ({r}, {c}) outside the {nr}x{nc} grid")
        for r, c, _ in self.wells:
            if c in (0, nc - 1):
                raise ValueError(f"well at ({r}, {c}) lies in a fixed-head column")

    @property
    def shape(self):
        return self.k.shape

    @property
    def h_left(self) -> float:
        """Head on the left face of the domain."""
        return self.h_right + self.gradient * self.k.shape[1] * self.dx

    def fixed_heads(self) -> tuple[float, float]:
        """Heads imposed in the first and last column (at cell centres)."""
        nc = self.k.shape[1]
        return (self.h_left - self.gradient * 0.5 * self.dx,
                self.h_left - self.gradient * (nc - 0.5) * self.dx)

    def with_k(self, k) -> FlowModel:
        return FlowModel(k, self.dx, self.dy, self.thickness, self.gradient, self.h_right,
                         list(self.wells), list(self.observations))


def k_field_from_facies(grid, mapping) -> np.ndarray:
    """Look up a conductivity for every facies code."""
    grid = np.asarray(grid)
    present = np.unique(grid)
    missing = [int(f) for f in present if int(f) not in mapping]
    if missing:
        raise ValueError(f"no conductivity given for facies {missing}")
    lut = np.zeros(int(present.max()) + 1)
    for f in present:
        lut[int(f)] = mapping[int(f)]
    return lut[grid]


def conductances(model: FlowModel):
    """Harmonic-mean conductances between x-neighbours (nr, nc-1) and y-neighbours (nr-1, nc)."""
    k, b = model.k, model.thickness
    tx = model.dy * b / (model.dx / (2 * k[:, :-1]) + model.dx / (2 * k[:, 1:]))
    ty = model.dx * b / (model.dy / (2 * k[:-1, :]) + model.dy / (2 * k[1:, :]))
    return tx, ty


def solve_heads(model: FlowModel) -> np.ndarray:
    """Head in every cell (m) from a sparse direct solve of the cell water balance."""
    nr, nc = model.shape
    if nc < 3:
        h_l, h_r = model.fixed_heads()
        heads = np.empty((nr, nc))
        heads[:, 0], heads[:, -1] = h_l, h_r
        return heads
    tx, ty = conductances(model)
    h_l, h_r = model.fixed_heads()
    na = nc - 2  # active columns 1..nc-2
    idx = np.arange(nr * na).reshape(nr, na)
    diag = np.zeros((nr, na))
    rhs = np.zeros((nr, na))
    rows, cols, vals = [], [], []

    # x-links between active cells
    t = tx[:, 1:-1]
    a, b_ = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    rows += [a, b_]
    cols += [b_, a]
    vals += [-t.ravel(), -t.ravel()]
    diag[:, :-1] += t
    diag[:, 1:] += t
    # links to the constant-head columns
    diag[:, 0] += tx[:, 0]
    rhs[:, 0] += tx[:, 0] * h_l
    diag[:, -1] += tx[:, -1]
    rhs[:, -1] += tx[:, -1] * h_r
    # y-links
    t = ty[:, 1:-1]
    a, b_ = idx[:-1, :].ravel(), idx[1:, :].ravel()
    rows += [a, b_]
    cols += [b_, a]
    vals += [-t.ravel(), -t.ravel()]
    diag[:-1, :] += t
    diag[1:, :] += t
    for r, c, q in model.wells:
        rhs[r, c - 1] += q

    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    n = nr * na
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    bvec = rhs.ravel()
    x = spsolve(A, bvec)
    if not np.all(np.isfinite(x)):
        raise FlowError("linear solve produced non-finite heads")
    res = np.linalg.norm(A @ x - bvec)
    if res > RESIDUAL_TOL * max(np.linalg.norm(bvec), 1e-300):
        raise FlowError(f"relative residual {res / np.linalg.norm(bvec):.3e} exceeds {RESIDUAL_TOL}")
    heads = np.empty((nr, nc))
    heads[:, 0], heads[:, -1] = h_l, h_r
    heads[:, 1:-1] = x.reshape(nr, na)
    return heads


def boundary_fluxes(model: FlowModel, heads) -> tuple[float, float]:
    """Volumetric flow (m3/s) entering the active domain through the left and right boundaries."""
    tx, _ = conductances(model)
    q_left = float(np.sum(tx[:, 0] * (heads[:, 0] - heads[:, 1])))
    q_right = float(np.sum(tx[:, -1] * (heads[:, -1] - heads[:, -2])))
    return q_left, q_right


def observe(heads, model: FlowModel) -> np.ndarray:
    """Heads at the observation cells, in the order they are listed in the model."""
    if not model.observations:
        raise ValueError("model has no observation points")
    r, c = np.asarray(model.observations, dtype=np.int64).T
    return np.asarray(heads)[r, c]


def regular_lattice(n: int, count: int = 7, start: int | None = None, step: int | None = None):
    """``count x count`` cells spread over an ``n x n`` grid, listed row-major."""
    if step is None:
        step = n // (count + 1)
    if start is None:
        start = step + 1
    pos = [start + i * step for i in range(count)]
    if pos[-1] >= n or step < 1:
        raise ValueError(f"lattice start={start} step={step} does not fit in {n} cells")
    return [(r, c) for r in pos for c in pos]


def default_model(k, rate: float = -1e-3, count: int = 7) -> FlowModel:
    """Centre extraction well, gradient 0.01, 1 m cells, regular observation lattice."""
    k = np.asarray(k, dtype=np.float64)
    nr, nc = k.shape
    return FlowModel(
        k,
        wells=[(nr // 2, nc // 2, rate)] if rate else [],
        observations=regular_lattice(min(nr, nc), count),
    )
