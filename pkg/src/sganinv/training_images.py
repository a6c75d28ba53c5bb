"""Synthetic categorical training images for desk-scale experiments."""

from __future__ import annotations

import numpy as np

__all__ = ["channel_ti"]


def channel_ti(
    shape=(200, 200),
    channel_fraction: float = 0.26,
    width_range=(4.0, 7.0),
    wavelength_range=(50.0, 120.0),
    amplitude_range=(4.0, 14.0),
    levee_width: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Meandering sinusoidal channels running along x on a matrix background.

    Returns an integer grid of shape ``(ny, nx)``: 0 = matrix, 1 = channel and,
    when ``levee_width > 0``, 2 = levee bands flanking the channels.
    Channels are added until the channel fraction reaches ``channel_fraction``.
    Centreline offsets are drawn by best-candidate sampling so channels spread
    over the whole y extent instead of clustering, which keeps the image
    close to stationary.
    """
    ny, nx = shape
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:ny, 0:nx].astype(float)
    grid = np.zeros(shape, dtype=np.int64)
    levee = np.zeros(shape, dtype=bool)
    offsets = []
    for _ in range(10_000):
        if np.mean(grid == 1) >= channel_fraction:
            break
        width = rng.uniform(*width_range)
        lam = rng.uniform(*wavelength_range)
        amp = rng.uniform(*amplitude_range)
        phase = rng.uniform(0, 2 * np.pi)
        y0 = _spread_offset(rng, ny, offsets)
        offsets.append(y0)
        # second harmonic breaks the perfect periodicity
        amp2 = rng.uniform(0, amp / 3)
        lam2 = lam / rng.uniform(2.0, 3.0)
        centre = y0 + amp * np.sin(2 * np.pi * xx / lam + phase) + amp2 * np.sin(2 * np.pi * xx / lam2)
        slope = (amp * 2 * np.pi / lam) * np.cos(2 * np.pi * xx / lam + phase) + (
            amp2 * 2 * np.pi / lam2
        ) * np.cos(2 * np.pi * xx / lam2)
        dist = np.abs(yy - centre) / np.sqrt(1.0 + slope**2)
        if levee_width > 0:
            levee |= dist <= width / 2 + levee_width
        grid[dist <= width / 2] = 1
    if levee_width > 0:
        grid[(grid == 0) & levee] = 2
    return grid


def _spread_offset(rng, ny, taken, n_candidates=8):
    """Candidate offset farthest from the ones already taken (and from the edges)."""
    cand = rng.uniform(0, ny, size=n_candidates)
    if not taken:
        return float(cand[0])
    ref = np.array(list(taken) + [0.0, float(ny)])
    gap = np.abs(cand[:, None] - ref[None, :]).min(axis=1)
    return float(cand[np.argmax(gap)])
