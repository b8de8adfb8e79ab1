"""Proximal maps, projections, smoothed penalties and operator norms."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ParamError

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.01


@dataclass(frozen=True)
class SmoothingParams:
    """Pseudo-Huber widths for the code l1 term and the two TV terms."""

    eps_code: float = 1e-3
    eps_tv_1: float = 1e-3
    eps_tv_2: float = 1e-3

    def __post_init__(self):
        for name in ("eps_code", "eps_tv_1", "eps_tv_2"):
            if not getattr(self, name) > 0:
                raise ParamError(f"{name} must be > 0")


class DeadAtomWarning(RuntimeWarning):
    """An atom had no positive entry and was reset to a canonical vector."""


def soft_threshold_nonneg(a, t):
    """Prox of ``t*||.||_1`` plus the nonnegativity indicator: max(a - t, 0)."""
    if t < 0:
        raise ParamError(f"threshold must be >= 0, got {t}")
    return np.maximum(np.asarray(a, dtype=np.float64) - t, 0.0)


def group_soft_threshold(da, t):
    """Column-wise shrinkage, the prox of ``t * sum_i ||da[:, i]||_2``."""
    if t < 0:
        raise ParamError(f"threshold must be >= 0, got {t}")
    da = np.asarray(da, dtype=np.float64)
    norms = np.sqrt(np.sum(da * da, axis=0))
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t / norms[keep]
    return da * scale


def project_dictionary(d):
    """Project every column onto the nonnegative part of the unit sphere.

    A column without any positive entry cannot be projected; it is replaced
    by the first canonical basis vector and a :class:`DeadAtomWarning` is
    emitted.
    """
    d = np.maximum(np.asarray(d, dtype=np.float64), 0.0)
    if d.ndim == 1:
        d = d[:, None]
    peak = d.max(axis=0) if d.shape[0] else np.zeros(d.shape[1])
    dead = peak == 0
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} dead atom(s) reset to e1", DeadAtomWarning, stacklevel=2)
        d[0, dead] = 1.0
        peak[dead] = 1.0
    # scale by the column peak first so tiny or huge columns do not under/overflow
    scaled = d / peak
    out = scaled / np.sqrt(np.sum(scaled * scaled, axis=0))
    # renormalizing an already unit-norm column can move its last bit
    norms = np.sqrt(np.sum(d * d, axis=0))
    exact = np.abs(norms - 1.0) <= 4 * np.finfo(float).eps
    out[:, exact] = d[:, exact]
    return out


def project_scaling(s):
    """Zero the off-diagonal and clamp the diagonal at 0."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ParamError(f"scaling matrix must be square, got {s.shape}")
    return np.diag(np.maximum(np.diag(s), 0.0))


def pseudo_huber(t, eps):
    """Value and gradient of ``sum(sqrt(t**2 + eps**2) - eps)``."""
    if not eps > 0:
        raise ParamError("eps must be > 0")
    t = np.asarray(t, dtype=np.float64)
    r = np.sqrt(t * t + eps * eps)
    return float(np.sum(r - eps)), t / r


def forward_gradient(x):
    """Forward differences along rows and columns with Neumann boundary.

    ``x`` has shape ``(..., H, W)``; the result has shape ``(2, ..., H, W)``
    holding the vertical then horizontal differences.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros((2,) + x.shape)
    g[0, ..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    g[1, ..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    return g


def divergence(p):
    """Discrete divergence, the negative adjoint of :func:`forward_gradient`."""
    p = np.asarray(p, dtype=np.float64)
    py, px = p[0], p[1]
    d = np.zeros(py.shape)
    d[..., :-1, :] += py[..., :-1, :]
    d[..., 1:, :] -= py[..., :-1, :]
    d[..., :, :-1] += px[..., :, :-1]
    d[..., :, 1:] -= px[..., :, :-1]
    return d


def tv_value_grad(x, eps, tau):
    """Smoothed anisotropic total variation ``tau * sum psi(grad x)``.

    Returns the value and its gradient ``-tau * div(psi'(grad x))``, which
    is ``8 * tau / eps`` Lipschitz.
    """
    if not eps > 0 or tau < 0:
        raise ParamError("need eps > 0 and tau >= 0")
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if tau == 0:
        return 0.0, np.zeros_like(x)
    value, field = pseudo_huber(forward_gradient(x), eps)
    return tau * value, -tau * divergence(field)


def spectral_norm(apply, apply_adjoint, dim, seed=0, x0=None, tol=1e-6,
                  max_iter=500, return_vector=False):
    """Estimate the operator norm of a linear map by power iteration.

    The iteration runs on ``apply_adjoint(apply(.))`` starting from ``x0``
    (or a seeded random vector of shape ``dim``). The returned estimate is
    inflated by :data:`SAFETY_FACTOR` so it can be used directly as a
    Lipschitz bound.
    """
    if x0 is None:
        x = np.random.default_rng(seed).standard_normal(dim)
    else:
        x = np.array(x0, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0:
        x = np.ones(dim)
        nx = np.linalg.norm(x)
    x /= nx
    lam = 0.0
    converged = False
    for _ in range(max_iter):
        y = apply_adjoint(apply(x))
        new = float(np.linalg.norm(y))
        if new == 0:
            lam, converged = 0.0, True
            break
        x = y / new
        if abs(new - lam) <= tol * new:
            lam, converged = new, True
            break
        lam = new
    if not converged:
        warnings.warn("power iteration did not converge; returning best estimate",
                      RuntimeWarning, stacklevel=2)
    norm = SAFETY_FACTOR * np.sqrt(lam)
    if return_vector:
        return norm, x
    return norm


def psd_norm(m, x0=None, tol=1e-6, max_iter=500):
    """Largest eigenvalue of a symmetric PSD matrix, with safety factor.

    Returns ``(estimate, vector)`` so successive calls can be warm-started.
    """
    m = np.asarray(m)
    n = m.shape[0]
    x = np.ones(n) if x0 is None else np.array(x0, dtype=np.float64)
    # the ones vector is a good start for nonnegative Gram matrices
    nx = np.linalg.norm(x)
    x = x / nx if nx > 0 else np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        y = m @ x
        new = float(np.linalg.norm(y))
        if new == 0:
            return 0.0, x
        x = y / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    else:
        logger.debug("psd_norm hit max_iter=%d", max_iter)
    return SAFETY_FACTOR * lam, x
