"""Overlapping patch extraction, its adjoint, and coupled patch grids.

Patches are vectorized band-major, then row-major within the band, and
stacked as the columns of a ``(K*K*L, n_patches)`` matrix. Anchors run
left to right, top to bottom.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import GeometryError


@dataclass(frozen=True)
class PatchGrid:
    """Regular grid of ``patch_size`` x ``patch_size`` windows.

    ``image_dims`` is ``(height, width, bands)``. Anchors that would overrun
    the image border are dropped, so the trailing rows/columns may be left
    uncovered when ``stride`` does not divide ``height - patch_size``.
    """

    patch_size: int
    stride: int
    image_dims: tuple

    def __post_init__(self):
        h, w, b = self.image_dims
        if self.patch_size < 1 or self.stride < 1:
            raise GeometryError("patch_size and stride must be >= 1")
        if self.patch_size > h or self.patch_size > w:
            raise GeometryError(
                f"patch size {self.patch_size} larger than image {h}x{w}")
        if b < 1:
            raise GeometryError("image must have at least one band")

    @property
    def n_rows(self):
        return (self.image_dims[0] - self.patch_size) // self.stride + 1

    @property
    def n_cols(self):
        return (self.image_dims[1] - self.patch_size) // self.stride + 1

    @property
    def n_patches(self):
        return self.n_rows * self.n_cols

    @property
    def patch_dim(self):
        return self.patch_size ** 2 * self.image_dims[2]

    @property
    def anchors(self):
        rows = np.arange(self.n_rows) * self.stride
        cols = np.arange(self.n_cols) * self.stride
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)

    @property
    def shape(self):
        """Image array shape ``(bands, height, width)``."""
        h, w, b = self.image_dims
        return (b, h, w)


def make_grid(dims, patch_size, stride=1):
    return PatchGrid(int(patch_size), int(stride), tuple(int(d) for d in dims))


def _ratio(a, b):
    q = Fraction(int(b), int(a))
    if q.numerator % q.denominator == 0:
        return q.numerator // q.denominator, False
    if q.denominator % q.numerator == 0:
        return q.denominator // q.numerator, True
    raise GeometryError(f"resolution ratio {b}/{a} is not an integer or its reciprocal")


def make_coupled_grids(dims1, dims2, patch_size, stride=1):
    """Build homologous grids on two co-registered images.

    ``patch_size`` and ``stride`` are expressed on the coarser image; the
    finer image gets both multiplied by the integer resolution ratio so
    the two grids have the same anchors in ground coordinates.
    """
    rho_w, inv_w = _ratio(dims1[1], dims2[1])
    rho_h, inv_h = _ratio(dims1[0], dims2[0])
    if (rho_w, inv_w) != (rho_h, inv_h):
        raise GeometryError("row and column resolution ratios differ")
    rho = rho_w
    coarse, fine = (dims2, dims1) if inv_w else (dims1, dims2)
    g_coarse = make_grid(coarse, patch_size, stride)
    g_fine = make_grid(fine, rho * patch_size, rho * stride)
    if g_fine.n_patches != g_coarse.n_patches:
        # fine image not an exact multiple of the coarse one
        raise GeometryError("image sizes inconsistent with the resolution ratio")
    return (g_fine, g_coarse) if inv_w else (g_coarse, g_fine)


def _image_array(x):
    a = getattr(x, "data", x)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    return a


def _check(a, g):
    if a.shape != g.shape:
        raise GeometryError(f"image shape {a.shape} does not match grid {g.shape}")


def extract_patches(x, g):
    """Return the ``(K*K*L, n_patches)`` patch matrix of image ``x``."""
    a = _image_array(x)
    _check(a, g)
    k, s = g.patch_size, g.stride
    win = sliding_window_view(a, (k, k), axis=(1, 2))[:, ::s, ::s]
    win = win[:, :g.n_rows, :g.n_cols]
    # (L, nr, nc, K, K) -> (L, K, K, nr, nc)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(g.patch_dim, g.n_patches)


def adjoint_accumulate(p, g):
    """Sum zero-padded patches back into an image of the grid's shape."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (g.patch_dim, g.n_patches):
        raise GeometryError(
            f"patch matrix shape {p.shape} does not match grid ({g.patch_dim}, {g.n_patches})")
    k, s, nr, nc = g.patch_size, g.stride, g.n_rows, g.n_cols
    b = g.image_dims[2]
    blocks = p.reshape(b, k, k, nr, nc)
    out = np.zeros(g.shape)
    for dr in range(k):
        for dc in range(k):
            out[:, dr:dr + s * (nr - 1) + 1:s, dc:dc + s * (nc - 1) + 1:s] += blocks[:, dr, dc]
    return out


def coverage_map(g):
    """Number of patches covering each pixel, shape ``(height, width)``.

    This is the diagonal of ``sum_i R_i^T R_i``; its maximum is that
    operator's norm.
    """
    h, w, _ = g.image_dims
    k, s, nr, nc = g.patch_size, g.stride, g.n_rows, g.n_cols
    cov = np.zeros((h, w))
    for dr in range(k):
        for dc in range(k):
            cov[dr:dr + s * (nr - 1) + 1:s, dc:dc + s * (nc - 1) + 1:s] += 1.0
    return cov
