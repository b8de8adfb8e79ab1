"""Sensor noise models and the matching data-fitting terms.

Optical images are modeled with additive white Gaussian noise, SAR
intensity images with multiplicative unit-mean Gamma speckle. The SAR
term used by the solver is the I-divergence ``sum(x - y log x)``; the
exact Itakura-Saito sum is provided for reporting only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, GeometryError, ParamError
from .raster import Modality, Raster


@dataclass(frozen=True)
class SensorModel:
    """Noise model of one acquisition.

    ``noise_sigma`` is the Gaussian standard deviation (optical) and
    ``looks`` the number of looks ``r`` (SAR), giving speckle variance 1/r.
    """

    modality: Modality = Modality.OPTICAL
    noise_sigma: float = 0.02
    looks: int = 5

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality.parse(self.modality))
        if self.modality is Modality.OPTICAL and not self.noise_sigma > 0:
            raise ParamError("optical noise_sigma must be > 0")
        if self.modality is Modality.SAR and (int(self.looks) != self.looks or self.looks < 1):
            raise ParamError("SAR looks must be an integer >= 1")


def _pair(y, x):
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if y.shape != x.shape:
        raise GeometryError(f"shape mismatch {y.shape} vs {x.shape}")
    return y, x


def _check_eta(eta):
    if not eta > 0:
        raise ParamError(f"prox step eta must be > 0, got {eta}")


def gaussian_divergence(y, x):
    y, x = _pair(y, x)
    return 0.5 * float(np.sum((y - x) ** 2))


def gaussian_prox(y, u, eta):
    """argmin_x  0.5*||y - x||^2 + eta/2 * ||x - u||^2."""
    _check_eta(eta)
    y, u = _pair(y, u)
    return (y + eta * u) / (eta + 1.0)


def sar_divergence(y, x):
    y, x = _pair(y, x)
    if np.any(x <= 0):
        raise DomainError("SAR divergence needs a strictly positive latent image")
    return float(np.sum(x - y * np.log(x)))


def itakura_saito_divergence(y, x):
    """sum(y/x - log(y/x) - 1); pixels with y == 0 are skipped."""
    y, x = _pair(y, x)
    if np.any(x <= 0):
        raise DomainError("Itakura-Saito divergence needs x > 0")
    keep = y > 0
    q = y[keep] / x[keep]
    return float(np.sum(q - np.log(q) - 1.0))


def sar_prox(y, u, eta):
    """argmin_x  sum(x - y log x) + eta/2 * ||x - u||^2, elementwise closed form."""
    _check_eta(eta)
    y, u = _pair(y, u)
    if np.any(y < 0):
        raise DomainError("SAR observations must be nonnegative")
    b = u - 1.0 / eta
    c = y / eta
    root = np.sqrt(b * b + 4.0 * c)
    # positive root of x^2 - b x - c; the conjugate form avoids cancellation for b < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = 2.0 * c / (root - b)
    return np.where(b >= 0, 0.5 * (b + root), np.where(root - b > 0, alt, 0.0))


def divergence(modality, y, x):
    if Modality.parse(modality) is Modality.SAR:
        return sar_divergence(y, x)
    return gaussian_divergence(y, x)


def prox(modality, y, u, eta):
    if Modality.parse(modality) is Modality.SAR:
        return sar_prox(y, u, eta)
    return gaussian_prox(y, u, eta)


def sar_noise(shape, looks, seed):
    """Unit-mean Gamma(looks, 1/looks) speckle from a counter-based stream."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.gamma(shape=float(looks), scale=1.0 / looks, size=shape)


def apply_sensor_model(x, model, seed):
    """Simulate an observation of latent image ``x`` under ``model``.

    The noise draw is fully determined by ``seed``.
    """
    data = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if model.modality is Modality.SAR:
        if np.any(data < 0):
            raise DomainError("SAR latent image must be nonnegative")
        y = data * sar_noise(data.shape, model.looks, seed)
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        y = data + rng.normal(0.0, model.noise_sigma, size=data.shape)
    if isinstance(x, Raster):
        return Raster(y, model.modality, x.resolution)
    return y
