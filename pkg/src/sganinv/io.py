"""File formats shared by the command-line tools.

Grid files start with a short text header::

    SGANGRID 1
    ndim 2
    extents 33 33
    facies 2            (or: facies continuous)
    dtype int64         (or: dtype float64)
    end

followed by the payload in row-major order.  Categorical payloads are
whitespace-separated integers, one grid line (last axis) per text line;
continuous payloads are raw little-endian float64 values.

Array files hold an arbitrary float64 array (for example MCMC states)
behind a similar ``SGANARRAY`` header.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "write_grid",
    "read_grid",
    "write_array",
    "read_array",
    "write_csv",
    "write_pgm",
]

GRID_MAGIC = "SGANGRID"
ARRAY_MAGIC = "SGANARRAY"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_header(fh, magic):
    first = fh.readline().decode("ascii", "replace").split()
    if len(first) != 2 or first[0] != magic:
        raise FormatError(f"not a {magic} file")
    if int(first[1]) != FORMAT_VERSION:
        raise FormatError(f"unsupported {magic} version {first[1]}")
    fields = {}
    while True:
        line = fh.readline()
        if not line:
            raise FormatError("header is missing its 'end' line")
        parts = line.decode("ascii", "replace").split()
        if parts == ["end"]:
            return fields
        if not parts:
            continue
        fields[parts[0]] = parts[1:]


def write_grid(path, grid, n_facies: int | None = None) -> None:
    """Write a categorical grid (``n_facies`` given) or a continuous grid (``n_facies=None``)."""
    grid = np.asarray(grid)
    if grid.ndim not in (2, 3):
        raise ValueError(f"grid must be 2D or 3D, got {grid.ndim}D")
    header = [f"{GRID_MAGIC} {FORMAT_VERSION}", f"ndim {grid.ndim}",
              "extents " + " ".join(str(n) for n in grid.shape)]
    if n_facies is None:
        header += ["facies continuous", "dtype float64", "end"]
        payload = np.ascontiguousarray(grid, dtype="<f8").tobytes()
    else:
        if not np.issubdtype(grid.dtype, np.integer):
            if not np.all(grid == np.round(grid)):
                raise ValueError("categorical grid holds non-integer values")
            grid = grid.astype(np.int64)
        if grid.size and (grid.min() < 0 or grid.max() >= n_facies):
            raise ValueError(f"facies codes must lie in [0, {n_facies})")
        header += [f"facies {n_facies}", "dtype int64", "end"]
        lines = [" ".join(str(int(v)) for v in row) for row in grid.reshape(-1, grid.shape[-1])]
        payload = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(payload)


def read_grid(path) -> tuple[np.ndarray, int | None]:
    """Return ``(grid, n_facies)``; ``n_facies`` is ``None`` for continuous grids."""
    with open(path, "rb") as fh:
        hdr = _read_header(fh, GRID_MAGIC)
        payload = fh.read()
    try:
        ndim = int(hdr["ndim"][0])
        shape = tuple(int(n) for n in hdr["extents"])
        facies = hdr["facies"][0]
        dtype = hdr["dtype"][0]
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"malformed grid header: {exc}") from None
    if len(shape) != ndim or any(n < 1 for n in shape):
        raise FormatError(f"extents {shape} inconsistent with ndim {ndim}")
    count = int(np.prod(shape))
    if facies == "continuous":
        if dtype != "float64" or len(payload) != 8 * count:
            raise FormatError(f"expected {count} float64 values")
        return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64), None
    n_facies = int(facies)
    values = np.array(payload.split(), dtype=np.int64)
    if values.size != count:
        raise FormatError(f"expected {count} values, found {values.size}")
    if count and (values.min() < 0 or values.max() >= n_facies):
        raise FormatError(f"facies codes outside [0, {n_facies})")
    return values.reshape(shape), n_facies


def write_array(path, array) -> None:
    array = np.asarray(array, dtype=np.float64)
    header = f"{ARRAY_MAGIC} {FORMAT_VERSION}\nshape {' '.join(str(n) for n in array.shape)}\nend\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        hdr = _read_header(fh, ARRAY_MAGIC)
        payload = fh.read()
    shape = tuple(int(n) for n in hdr.get("shape", []))
    if len(payload) != 8 * int(np.prod(shape)):
        raise FormatError(f"payload does not match shape {shape}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def write_csv(path, header, rows) -> None:
    """Floats are written with ``repr`` so they round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_pgm(path, grid, vmin: float | None = None, vmax: float | None = None) -> None:
    """8-bit binary graymap of a 2D grid, linearly scaled to 0..255."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("graymap export needs a 2D grid")
    lo = grid.min() if vmin is None else vmin
    hi = grid.max() if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    img = np.clip(np.round((grid - lo) / span * 255.0), 0, 255).astype(np.uint8)
    ny, nx = img.shape
    Path(path).write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + img.tobytes())
