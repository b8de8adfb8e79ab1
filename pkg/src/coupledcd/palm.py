"""Coupled dictionary learning objective and its PALM solver.

Two co-registered images are modeled patch by patch::

    R1_i X1 ~ D1 S a1_i        R2_i X2 ~ D2 (a1_i + da_i)

where ``D1, D2`` are nonnegative unit-norm dictionaries, ``S`` a
nonnegative diagonal scaling, ``A1 >= 0`` the shared code and ``dA`` the
code change whose column norms flag changed patches. Every block is
updated by a proximal gradient step whose step size is the inverse of the
block Lipschitz constant, in the fixed order A1, dA, D1, D2, S, X1, X2.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import divergences
from .exceptions import GeometryError, InitError, InvariantError, NumericalError, ParamError
from .patches import adjoint_accumulate, coverage_map, extract_patches, make_coupled_grids
from .proximal import (
    SAFETY_FACTOR,
    SmoothingParams,
    group_soft_threshold,
    project_dictionary,
    project_scaling,
    psd_norm,
    pseudo_huber,
    soft_threshold_nonneg,
    spectral_norm,
    tv_value_grad,
)
from .raster import Modality

logger = logging.getLogger(__name__)

SAR_FLOOR = 1e-6
BLOCKS = ("A1", "dA", "D1", "D2", "S", "X1", "X2")
TRACE_COLUMNS = ("iter", "objective") + tuple("L_" + b for b in BLOCKS)

DEFAULT_TAU = {Modality.OPTICAL: 0.05, Modality.SAR: 0.15}


@dataclass(frozen=True)
class SolverConfig:
    """Weights and run controls of the coupled model.

    ``tau1``/``tau2`` left as ``None`` pick a modality default (0.05 for
    optical, 0.15 for SAR). ``sigma1_sq``/``sigma2_sq`` multiply the patch
    coupling terms, so larger values couple the latent images more tightly
    to their dictionary representation.

    The defaults were tuned on the procedural scenes of
    :mod:`coupledcd.evaluation` (96 x 96, 10% change). Small patches and few
    atoms keep the dictionaries from learning the change itself.
    """

    lam: float = 0.001
    gamma: float = 0.45
    sigma1_sq: float = 0.25
    sigma2_sq: float = 0.25
    tau1: float | None = None
    tau2: float | None = None
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    n_atoms: int = 32
    patch_size: int = 6
    stride: int = 1
    max_iters: int = 100
    rel_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        for name in ("lam", "gamma", "sigma1_sq", "sigma2_sq"):
            if getattr(self, name) < 0:
                raise ParamError(f"{name} must be >= 0")
        for name in ("tau1", "tau2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ParamError(f"{name} must be >= 0")
        if not self.rel_tol > 0:
            raise ParamError("rel_tol must be > 0")
        if self.n_atoms < 1 or self.max_iters < 0:
            raise ParamError("n_atoms must be >= 1 and max_iters >= 0")
        if isinstance(self.smoothing, dict):
            object.__setattr__(self, "smoothing", SmoothingParams(**self.smoothing))

    def tau(self, which, modality):
        v = self.tau1 if which == 1 else self.tau2
        return DEFAULT_TAU[Modality.parse(modality)] if v is None else float(v)

    def eps_tv(self, which):
        return self.smoothing.eps_tv_1 if which == 1 else self.smoothing.eps_tv_2


@dataclass
class CoupledProblem:
    """Observed pair, modalities and homologous patch grids."""

    y1: np.ndarray
    y2: np.ndarray
    modality1: Modality
    modality2: Modality
    grid1: object
    grid2: object

    def __post_init__(self):
        self.y1 = _as_image(self.y1)
        self.y2 = _as_image(self.y2)
        self.modality1 = Modality.parse(self.modality1)
        self.modality2 = Modality.parse(self.modality2)
        if self.y1.shape != self.grid1.shape or self.y2.shape != self.grid2.shape:
            raise GeometryError("images do not match their patch grids")
        if self.grid1.n_patches != self.grid2.n_patches:
            raise GeometryError("grids are not homologous")
        self.cov_max1 = float(coverage_map(self.grid1).max())
        self.cov_max2 = float(coverage_map(self.grid2).max())

    @classmethod
    def build(cls, y1, y2, modality1=None, modality2=None, patch_size=8, stride=2):
        """Build from arrays ``(bands, h, w)`` or :class:`~coupledcd.raster.Raster`."""
        m1 = modality1 if modality1 is not None else getattr(y1, "modality", Modality.OPTICAL)
        m2 = modality2 if modality2 is not None else getattr(y2, "modality", Modality.OPTICAL)
        a1, a2 = _as_image(y1), _as_image(y2)
        dims1 = (a1.shape[1], a1.shape[2], a1.shape[0])
        dims2 = (a2.shape[1], a2.shape[2], a2.shape[0])
        g1, g2 = make_coupled_grids(dims1, dims2, patch_size, stride)
        return cls(a1, a2, m1, m2, g1, g2)

    def y(self, which):
        return self.y1 if which == 1 else self.y2

    def modality(self, which):
        return self.modality1 if which == 1 else self.modality2

    def grid(self, which):
        return self.grid1 if which == 1 else self.grid2

    def sigma_sq(self, which, config):
        return config.sigma1_sq if which == 1 else config.sigma2_sq


def _as_image(a):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    return a[None] if a.ndim == 2 else a


@dataclass
class SolverState:
    """All unknowns of the coupled model plus iteration bookkeeping.

    ``s`` holds the diagonal of the scaling matrix.
    """

    x1: np.ndarray
    x2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    s: np.ndarray
    a1: np.ndarray
    da: np.ndarray
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    lipschitz_trace: list = field(default_factory=list)

    @property
    def S(self):
        return np.diag(self.s)

    def x(self, which):
        return self.x1 if which == 1 else self.x2

    def d(self, which):
        return self.d1 if which == 1 else self.d2

    def code(self, which):
        """Effective code of image ``which``: S A1 or A1 + dA."""
        return self.s[:, None] * self.a1 if which == 1 else self.a1 + self.da

    def copy(self):
        return SolverState(
            self.x1.copy(), self.x2.copy(), self.d1.copy(), self.d2.copy(),
            self.s.copy(), self.a1.copy(), self.da.copy(), self.iteration,
            list(self.objective_trace), [dict(r) for r in self.lipschitz_trace])


def check_state(state, atol=1e-9):
    """Raise :class:`InvariantError` if a constraint set is violated."""
    for name in ("d1", "d2"):
        d = getattr(state, name)
        if np.any(d < 0):
            raise InvariantError(f"{name} has negative entries")
        if not np.allclose(np.linalg.norm(d, axis=0), 1.0, atol=atol):
            raise InvariantError(f"{name} columns are not unit norm")
    if np.any(state.s < 0):
        raise InvariantError("scaling diagonal has negative entries")
    if np.any(state.a1 < 0):
        raise InvariantError("A1 has negative entries")


# -- objective ---------------------------------------------------------------

def _data_term(modality, y, x):
    if modality is Modality.SAR:
        pos = y > 0
        if np.any(x[pos] <= 0):
            raise NumericalError("SAR latent image is not positive where Y > 0")
        return float(np.sum(x) - np.sum(y[pos] * np.log(x[pos])))
    return divergences.gaussian_divergence(y, x)


def residual(state, problem, which, patches=None):
    """``D_a Abar_a - P_a``, the patch reconstruction error of image ``which``."""
    if patches is None:
        patches = extract_patches(state.x(which), problem.grid(which))
    return state.d(which) @ state.code(which) - patches


def objective_terms(state, problem, config):
    """Every term of the objective as a dict (indicator terms omitted)."""
    eps = config.smoothing
    terms = {}
    for w in (1, 2):
        terms[f"data{w}"] = _data_term(problem.modality(w), problem.y(w), state.x(w))
        r = residual(state, problem, w)
        terms[f"coupling{w}"] = 0.5 * problem.sigma_sq(w, config) * float(np.sum(r * r))
        tau = config.tau(w, problem.modality(w))
        terms[f"tv{w}"] = tv_value_grad(state.x(w), config.eps_tv(w), tau)[0] if tau > 0 else 0.0
    terms["l1_a1"] = config.lam * float(np.sum(np.abs(state.a1)))
    terms["l1_a2"] = config.lam * pseudo_huber(state.a1 + state.da, eps.eps_code)[0]
    terms["group_da"] = config.gamma * float(np.sum(np.linalg.norm(state.da, axis=0)))
    return terms


def objective(state, problem, config, check=True):
    """Objective value with the smoothed l1 and TV surrogates."""
    if check:
        check_state(state)
    return float(sum(objective_terms(state, problem, config).values()))


def coupling_value(state, problem, config):
    """Value of the smooth coupling function H (the part handled by gradients)."""
    t = objective_terms(state, problem, config)
    return t["coupling1"] + t["coupling2"] + t["tv1"] + t["tv2"] + t["l1_a2"]


# -- block gradients of H ----------------------------------------------------

def _ph_grad(state, config):
    if config.lam == 0:
        return 0.0
    return config.lam * pseudo_huber(state.a1 + state.da, config.smoothing.eps_code)[1]


def grad_a1(state, problem, config, r1=None, r2=None):
    r1 = residual(state, problem, 1) if r1 is None else r1
    r2 = residual(state, problem, 2) if r2 is None else r2
    g = config.sigma1_sq * state.s[:, None] * (state.d1.T @ r1)
    g += config.sigma2_sq * (state.d2.T @ r2)
    return g + _ph_grad(state, config)


def grad_da(state, problem, config, r2=None):
    r2 = residual(state, problem, 2) if r2 is None else r2
    return config.sigma2_sq * (state.d2.T @ r2) + _ph_grad(state, config)


def grad_d(state, problem, config, which, r=None):
    r = residual(state, problem, which) if r is None else r
    return problem.sigma_sq(which, config) * (r @ state.code(which).T)


def grad_s(state, problem, config, r1=None):
    r1 = residual(state, problem, 1) if r1 is None else r1
    return config.sigma1_sq * np.sum((state.d1.T @ r1) * state.a1, axis=1)


def grad_x(state, problem, config, which, r=None):
    r = residual(state, problem, which) if r is None else r
    g = -problem.sigma_sq(which, config) * adjoint_accumulate(r, problem.grid(which))
    tau = config.tau(which, problem.modality(which))
    if tau > 0:
        g += tv_value_grad(state.x(which), config.eps_tv(which), tau)[1]
    return g


def analytic_gradient(state, problem, config, block):
    if block == "A1":
        return grad_a1(state, problem, config)
    if block == "dA":
        return grad_da(state, problem, config)
    if block in ("D1", "D2"):
        return grad_d(state, problem, config, int(block[1]))
    if block == "S":
        return grad_s(state, problem, config)
    if block in ("X1", "X2"):
        return grad_x(state, problem, config, int(block[1]))
    raise ValueError(f"unknown block {block!r}")


_BLOCK_ATTR = {"A1": "a1", "dA": "da", "D1": "d1", "D2": "d2", "S": "s", "X1": "x1", "X2": "x2"}


def grad_check_harness(state, problem, config, block, step=1e-6):
    """Relative error between the analytic gradient of H and central differences.

    Returns ``||g_fd - g|| / max(||g||, ||g_fd||)``, or 0 when both vanish.
    """
    g = analytic_gradient(state, problem, config, block)
    attr = _BLOCK_ATTR[block]
    base = getattr(state, attr)
    fd = np.zeros_like(base)
    probe = state.copy()
    work = getattr(probe, attr)
    for idx in np.ndindex(base.shape):
        orig = work[idx]
        work[idx] = orig + step
        hp = coupling_value(probe, problem, config)
        work[idx] = orig - step
        hm = coupling_value(probe, problem, config)
        work[idx] = orig
        fd[idx] = (hp - hm) / (2 * step)
    scale = max(np.linalg.norm(g), np.linalg.norm(fd))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(fd - g) / scale)


# -- Lipschitz constants -----------------------------------------------------

class _NormCache:
    """Warm-start vectors for the power iterations, one per quantity."""

    def __init__(self):
        self.vectors = {}

    def psd(self, key, m):
        val, vec = psd_norm(m, self.vectors.get(key))
        self.vectors[key] = vec
        return val

    def gram_of(self, key, a):
        # ||a a^T|| = ||a||^2 via matrix-vector products only
        x0 = self.vectors.get(key)
        if x0 is None:
            x0 = np.ones(a.shape[0])
        nrm, vec = spectral_norm(lambda v: a.T @ v, lambda v: a @ v, a.shape[0],
                                 x0=x0, return_vector=True)
        self.vectors[key] = vec
        # spectral_norm inflated ||a|| once; square of that is a looser bound
        return nrm * nrm / SAFETY_FACTOR


def lipschitz_a1(state, config, norms=None):
    norms = norms or _NormCache()
    g1 = state.d1.T @ state.d1
    g2 = state.d2.T @ state.d2
    l1 = norms.psd("DS1", state.s[:, None] * g1 * state.s[None, :]) if config.sigma1_sq else 0.0
    l2 = norms.psd("D2", g2) if config.sigma2_sq else 0.0
    return config.sigma1_sq * l1 + config.sigma2_sq * l2 + config.lam / config.smoothing.eps_code


def lipschitz_da(state, config, norms=None):
    norms = norms or _NormCache()
    l2 = norms.psd("D2", state.d2.T @ state.d2) if config.sigma2_sq else 0.0
    return config.sigma2_sq * l2 + config.lam / config.smoothing.eps_code


def lipschitz_d(state, problem, config, which, norms=None):
    norms = norms or _NormCache()
    sig = problem.sigma_sq(which, config)
    if sig == 0:
        return 0.0
    return sig * norms.gram_of(f"A{which}", state.code(which))


def lipschitz_s(state, config, norms=None):
    """Exact Lipschitz constant of the gradient w.r.t. the scaling diagonal.

    The Hessian is ``sigma1^2 (D1^T D1) o (A1 A1^T)`` (Hadamard product).
    """
    norms = norms or _NormCache()
    if config.sigma1_sq == 0:
        return 0.0
    hess = (state.d1.T @ state.d1) * (state.a1 @ state.a1.T)
    return config.sigma1_sq * norms.psd("S", hess)


def lipschitz_x(problem, config, which):
    cov = problem.cov_max1 if which == 1 else problem.cov_max2
    tau = config.tau(which, problem.modality(which))
    return problem.sigma_sq(which, config) * cov + 8.0 * tau / config.eps_tv(which)


# -- block updates -----------------------------------------------------------
# Each update returns the new value of its block. ``lipschitz`` may be passed
# in when the caller already computed it (with warm-started power iterations).

def update_code(state, problem, config, r1=None, r2=None, lipschitz=None):
    """Proximal gradient step on A1; the result is nonnegative."""
    L = lipschitz_a1(state, config) if lipschitz is None else lipschitz
    if L <= 0:
        raise ParamError("A1 step undefined: all weights acting on A1 are zero")
    g = grad_a1(state, problem, config, r1, r2)
    return soft_threshold_nonneg(state.a1 - g / L, config.lam / L)


def update_delta_code(state, problem, config, r2=None, lipschitz=None):
    L = lipschitz_da(state, config) if lipschitz is None else lipschitz
    if L <= 0:
        raise ParamError("dA step undefined: all weights acting on dA are zero")
    g = grad_da(state, problem, config, r2)
    return group_soft_threshold(state.da - g / L, config.gamma / L)


def update_dictionary(state, problem, config, which, r=None, lipschitz=None):
    L = lipschitz_d(state, problem, config, which) if lipschitz is None else lipschitz
    d = state.d(which)
    if L <= 0:
        warnings.warn(f"D{which} update skipped: zero code or zero weight", RuntimeWarning)
        return d.copy()
    return project_dictionary(d - grad_d(state, problem, config, which, r) / L)


def update_scaling(state, problem, config, r1=None, lipschitz=None):
    L = lipschitz_s(state, config) if lipschitz is None else lipschitz
    if L <= 0:
        warnings.warn("S update skipped: zero code or zero weight", RuntimeWarning)
        return state.s.copy()
    step = state.s - grad_s(state, problem, config, r1) / L
    return np.diag(project_scaling(np.diag(step)))


def update_latent(state, problem, config, which, r=None, lipschitz=None):
    """Forward step on H, then the data-fitting prox of the image modality."""
    L = lipschitz_x(problem, config, which) if lipschitz is None else lipschitz
    y = problem.y(which)
    if L <= 0:
        # no coupling and no TV: the data term alone is minimized at Y
        return y.copy()
    u = state.x(which) - grad_x(state, problem, config, which, r) / L
    return divergences.prox(problem.modality(which), y, u, L)


# -- driver ------------------------------------------------------------------

def initialize(problem, config):
    """Dictionaries from random homologous patch pairs, small random codes.

    Raises :class:`InitError` when more atoms than patches are requested.
    """
    n_p = problem.grid1.n_patches
    n_d = config.n_atoms
    if n_d > n_p:
        raise InitError(f"n_atoms={n_d} exceeds the number of patches {n_p}")
    rng = np.random.default_rng(config.seed)
    pick = np.sort(rng.choice(n_p, size=n_d, replace=False))
    x1 = problem.y1.copy()
    x2 = problem.y2.copy()
    if problem.modality1 is Modality.SAR:
        x1 = np.maximum(x1, SAR_FLOOR)
    if problem.modality2 is Modality.SAR:
        x2 = np.maximum(x2, SAR_FLOOR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d1 = project_dictionary(extract_patches(problem.y1, problem.grid1)[:, pick])
        d2 = project_dictionary(extract_patches(problem.y2, problem.grid2)[:, pick])
    a1 = rng.uniform(0.0, 0.01, size=(n_d, n_p))
    return SolverState(x1, x2, d1, d2, np.ones(n_d), a1, np.zeros((n_d, n_p)))


def _iterate(state, problem, config, norms, p1, p2):
    """One full PALM sweep in place; returns the Lipschitz constants used."""
    lips = {}
    r1 = state.d1 @ state.code(1) - p1
    r2 = state.d2 @ state.code(2) - p2
    lips["A1"] = lipschitz_a1(state, config, norms)
    state.a1 = update_code(state, problem, config, r1, r2, lips["A1"])

    r2 = state.d2 @ state.code(2) - p2
    lips["dA"] = lipschitz_da(state, config, norms)
    state.da = update_delta_code(state, problem, config, r2, lips["dA"])

    r1 = state.d1 @ state.code(1) - p1
    lips["D1"] = lipschitz_d(state, problem, config, 1, norms)
    state.d1 = update_dictionary(state, problem, config, 1, r1, lips["D1"])

    r2 = state.d2 @ state.code(2) - p2
    lips["D2"] = lipschitz_d(state, problem, config, 2, norms)
    state.d2 = update_dictionary(state, problem, config, 2, r2, lips["D2"])

    r1 = state.d1 @ state.code(1) - p1
    lips["S"] = lipschitz_s(state, config, norms)
    state.s = update_scaling(state, problem, config, r1, lips["S"])

    r1 = state.d1 @ state.code(1) - p1
    lips["X1"] = lipschitz_x(problem, config, 1)
    state.x1 = update_latent(state, problem, config, 1, r1, lips["X1"])
    r2 = state.d2 @ state.code(2) - p2
    lips["X2"] = lipschitz_x(problem, config, 2)
    state.x2 = update_latent(state, problem, config, 2, r2, lips["X2"])
    return lips


def run(problem, config, state=None, callback=None, trace_path=None):
    """Run PALM from ``state`` (default: :func:`initialize`) until convergence.

    Stops when the relative objective change drops below ``config.rel_tol``
    or after ``config.max_iters`` sweeps. ``callback(iteration, snapshot)``
    receives a copy of the state after every sweep.
    """
    state = initialize(problem, config) if state is None else state
    norms = _NormCache()
    prev = objective(state, problem, config, check=False)
    if not np.isfinite(prev):
        raise NumericalError("objective is not finite at initialization", 0)
    if not state.objective_trace:
        state.objective_trace.append(prev)
    for _ in range(config.max_iters):
        p1 = extract_patches(state.x1, problem.grid1)
        p2 = extract_patches(state.x2, problem.grid2)
        lips = _iterate(state, problem, config, norms, p1, p2)
        state.iteration += 1
        cur = objective(state, problem, config, check=False)
        if not np.isfinite(cur):
            raise NumericalError(f"objective became {cur} at iteration {state.iteration}",
                                 state.iteration)
        state.objective_trace.append(cur)
        state.lipschitz_trace.append(lips)
        if callback is not None:
            callback(state.iteration, state.copy())
        if abs(cur - prev) <= config.rel_tol * abs(prev):
            break
        prev = cur
    check_state(state)
    if trace_path is not None:
        write_trace(state, trace_path)
    return state


def write_trace(state, path):
    """Per-iteration CSV: objective and the Lipschitz constant of each block."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for k, (obj, lips) in enumerate(zip(state.objective_trace[1:], state.lipschitz_trace), 1):
            w.writerow([k, repr(obj)] + [repr(float(lips[b])) for b in BLOCKS])
