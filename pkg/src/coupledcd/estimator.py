"""Scikit-learn style front end to the coupled dictionary change detector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import palm
from .change import code_change_energy, energy_to_pixel_map, threshold_map
from .exceptions import DataError, DegenerateError, ParamError
from .proximal import SmoothingParams
from .raster import Modality, Raster


def check_image(y, modality=None, name="image"):
    """Validate one observed image.

    Accepts a :class:`Raster` or an array of shape ``(h, w)`` or
    ``(bands, h, w)``. Returns ``(float64 array (bands, h, w), Modality)``.
    """
    if modality is None:
        modality = getattr(y, "modality", Modality.OPTICAL)
    modality = Modality.parse(modality)
    a = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise DataError(f"{name}: expected a (bands, height, width) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name}: contains NaN or Inf")
    if modality is Modality.SAR and np.any(a < 0):
        raise DataError(f"{name}: SAR intensities must be nonnegative")
    return a, modality


def _scale(a, how):
    if how in (False, None, "none"):
        return 1.0
    if how in (True, "max"):
        v = float(a.max())
    elif how == "mean":
        v = float(a.mean())
    else:
        raise ParamError(f"unknown normalization {how!r}")
    if v <= 0:
        raise DegenerateError("cannot normalize an image without positive values")
    return v


class CoupledDictionaryChangeDetector(BaseEstimator):
    """Unsupervised change detector for a pair of co-registered images.

    Both images are explained by coupled dictionaries sharing one sparse
    code; the learned code change ``dA`` is zero for unchanged patches and
    its column norms give a change energy per patch, spread to pixels of
    the finer image.

    Parameters mirror :class:`coupledcd.palm.SolverConfig` (``lam`` is the
    l1 weight). ``normalize`` divides each input by its mean (``"mean"``),
    its maximum (``"max"`` or True) or nothing (``"none"`` or False) before
    solving. ``aggregation`` selects how overlapping patch energies are
    merged per pixel (``"mean"`` or ``"max"``). ``threshold`` is the default
    cut used by :meth:`predict`.

    Attributes
    ----------
    state_ : SolverState
    patch_energy_ : ndarray (n_patches,)
    energy_ : ndarray (height, width)
        Per-pixel energy on the finer image grid.
    objective_trace_ : list of float
    n_iter_ : int
    scales_ : tuple of float
        Normalization factors of the two inputs.
    """

    def __init__(self, n_atoms=32, patch_size=6, stride=1, lam=0.001, gamma=0.45,
                 sigma1_sq=0.25, sigma2_sq=0.25, tau1=None, tau2=None, eps_code=1e-3,
                 eps_tv_1=1e-3, eps_tv_2=1e-3, max_iters=100, rel_tol=1e-5, seed=0,
                 normalize="mean", aggregation="mean", threshold=None):
        self.n_atoms = n_atoms
        self.patch_size = patch_size
        self.stride = stride
        self.lam = lam
        self.gamma = gamma
        self.sigma1_sq = sigma1_sq
        self.sigma2_sq = sigma2_sq
        self.tau1 = tau1
        self.tau2 = tau2
        self.eps_code = eps_code
        self.eps_tv_1 = eps_tv_1
        self.eps_tv_2 = eps_tv_2
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.seed = seed
        self.normalize = normalize
        self.aggregation = aggregation
        self.threshold = threshold

    @classmethod
    def from_config(cls, config, **kwargs):
        params = dict(
            n_atoms=config.n_atoms, patch_size=config.patch_size, stride=config.stride,
            lam=config.lam, gamma=config.gamma, sigma1_sq=config.sigma1_sq,
            sigma2_sq=config.sigma2_sq, tau1=config.tau1, tau2=config.tau2,
            eps_code=config.smoothing.eps_code, eps_tv_1=config.smoothing.eps_tv_1,
            eps_tv_2=config.smoothing.eps_tv_2, max_iters=config.max_iters,
            rel_tol=config.rel_tol, seed=config.seed)
        params.update(kwargs)
        return cls(**params)

    def solver_config(self):
        return palm.SolverConfig(
            lam=self.lam, gamma=self.gamma, sigma1_sq=self.sigma1_sq,
            sigma2_sq=self.sigma2_sq, tau1=self.tau1, tau2=self.tau2,
            smoothing=SmoothingParams(self.eps_code, self.eps_tv_1, self.eps_tv_2),
            n_atoms=self.n_atoms, patch_size=self.patch_size, stride=self.stride,
            max_iters=self.max_iters, rel_tol=self.rel_tol, seed=self.seed)

    def fit(self, Y1, Y2, modality1=None, modality2=None, callback=None, trace_path=None):
        """Learn dictionaries, codes and latent images for the pair ``(Y1, Y2)``."""
        if self.aggregation not in ("mean", "max"):
            raise ParamError(f"unknown aggregation {self.aggregation!r}")
        config = self.solver_config()
        a1, m1 = check_image(Y1, modality1, "Y1")
        a2, m2 = check_image(Y2, modality2, "Y2")
        scales = (_scale(a1, self.normalize), _scale(a2, self.normalize))
        a1, a2 = a1 / scales[0], a2 / scales[1]
        problem = palm.CoupledProblem.build(a1, a2, m1, m2, self.patch_size, self.stride)
        state = palm.run(problem, config, callback=callback, trace_path=trace_path)

        self.problem_ = problem
        self.state_ = state
        self.scales_ = scales
        self.objective_trace_ = list(state.objective_trace)
        self.n_iter_ = state.iteration
        self.patch_energy_ = code_change_energy(state.da)
        grid = problem.grid1 if problem.grid1.image_dims[0] > problem.grid2.image_dims[0] else problem.grid2
        self.grid_ = grid
        self.energy_ = energy_to_pixel_map(self.patch_energy_, grid, self.aggregation)
        return self

    def transform(self, Y1=None, Y2=None):
        """Return the per-pixel change energy; refits when a new pair is given."""
        if Y1 is not None or Y2 is not None:
            if Y1 is None or Y2 is None:
                raise ParamError("transform needs both images or neither")
            self.fit(Y1, Y2)
        check_is_fitted(self, "energy_")
        return self.energy_

    def fit_transform(self, Y1, Y2, **fit_params):
        return self.fit(Y1, Y2, **fit_params).energy_

    def predict(self, threshold=None):
        """Binary change mask of the fitted pair."""
        check_is_fitted(self, "energy_")
        tau = self.threshold if threshold is None else threshold
        if tau is None:
            raise ParamError("no threshold given")
        return threshold_map(self.energy_, tau)

    def energy_raster(self, resolution=1.0):
        check_is_fitted(self, "energy_")
        return Raster(self.energy_, Modality.OPTICAL, resolution)
