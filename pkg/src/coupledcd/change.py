"""From code changes to per-pixel change energy and binary change masks."""

from __future__ import annotations

import numpy as np

from .exceptions import GeometryError, ParamError
from .patches import adjoint_accumulate, coverage_map
from .raster import BinaryChangeMask


def code_change_energy(da):
    """Per-patch energy: the l2 norm of each column of the code change."""
    da = np.asarray(da, dtype=np.float64)
    return np.sqrt(np.sum(da * da, axis=0))


def energy_to_pixel_map(e, grid, aggregation="mean"):
    """Spread patch energies onto the pixels of ``grid``'s image.

    Each pixel gets the mean (or max) energy of the patches covering it;
    uncovered pixels get 0. Returns an array of shape ``(height, width)``.
    """
    e = np.asarray(e, dtype=np.float64).ravel()
    if e.size != grid.n_patches:
        raise GeometryError(f"{e.size} energies for a grid of {grid.n_patches} patches")
    h, w, _ = grid.image_dims
    single = grid.__class__(grid.patch_size, grid.stride, (h, w, 1))
    if aggregation == "mean":
        k2 = grid.patch_size ** 2
        total = adjoint_accumulate(np.broadcast_to(e, (k2, e.size)), single)[0]
        cov = coverage_map(single)
        out = np.zeros((h, w))
        np.divide(total, cov, out=out, where=cov > 0)
        return out
    if aggregation == "max":
        out = np.zeros((h, w))
        k, s = grid.patch_size, grid.stride
        blocks = e.reshape(grid.n_rows, grid.n_cols)
        for dr in range(k):
            for dc in range(k):
                view = out[dr:dr + s * (grid.n_rows - 1) + 1:s, dc:dc + s * (grid.n_cols - 1) + 1:s]
                np.maximum(view, blocks, out=view)
        return out
    raise ParamError(f"unknown aggregation {aggregation!r}")


def threshold_map(energy, tau):
    """Binary mask: 1 where ``energy >= tau``."""
    if tau < 0 or np.isnan(tau):
        raise ParamError(f"threshold must be >= 0, got {tau}")
    energy = np.asarray(getattr(energy, "data", energy), dtype=np.float64)
    if energy.ndim == 3:
        if energy.shape[0] != 1:
            raise GeometryError("energy map must have a single band")
        energy = energy[0]
    return BinaryChangeMask((energy >= tau).astype(np.uint8))
