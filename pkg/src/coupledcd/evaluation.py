"""ROC-based figures of merit and the synthetic change simulation protocol.

A scenario pairs a reference latent image of one modality with a changed
latent image of another (or the same) modality, corrupts both with their
sensor noise, runs the detector and scores its energy map against the
planted change mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .divergences import SensorModel, apply_sensor_model
from .exceptions import EvalError, GeometryError, ParamError
from .raster import BinaryChangeMask, Modality, Raster

N_LIBRARY_MASKS = 10
MIN_LIBRARY_DIM = 32
MIN_COVERAGE, MAX_COVERAGE = 0.02, 0.15


@dataclass(frozen=True)
class RocCurve:
    """Empirical ROC as arrays of false-alarm and detection rates.

    Points are sorted by threshold from +inf to -inf, so both coordinates
    are non-decreasing; (0, 0) and (1, 1) are always present.
    """

    pfa: np.ndarray
    pd: np.ndarray
    thresholds: np.ndarray = field(default=None, repr=False)

    def points(self):
        return list(zip(self.pfa.tolist(), self.pd.tolist()))


def _flat_scores(energy):
    e = np.asarray(getattr(energy, "data", energy), dtype=np.float64)
    if e.ndim == 3:
        e = e[0]
    return e


def roc_curve(energy, truth):
    """ROC obtained by sweeping every distinct energy value as a threshold.

    A pixel is declared changed when its energy is >= the threshold.
    """
    e = _flat_scores(energy)
    t = np.asarray(getattr(truth, "values", truth))
    if e.shape != t.shape:
        raise GeometryError(f"energy {e.shape} and truth {t.shape} differ in shape")
    e = e.ravel()
    t = t.ravel().astype(bool)
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("ground truth must contain both change and no-change pixels")
    order = np.argsort(-e, kind="mergesort")
    e_sorted = e[order]
    t_sorted = t[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(~t_sorted)
    # keep the last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(e_sorted))[0], e.size - 1]
    pd = np.r_[0.0, tp[last] / n_pos]
    pfa = np.r_[0.0, fp[last] / n_neg]
    thr = np.r_[np.inf, e_sorted[last]]
    if pd[-1] != 1.0 or pfa[-1] != 1.0:
        pd, pfa, thr = np.r_[pd, 1.0], np.r_[pfa, 1.0], np.r_[thr, -np.inf]
    return RocCurve(pfa, pd, thr)


def auc(curve):
    """Trapezoidal area under the ROC curve."""
    return float(np.sum(np.diff(curve.pfa) * (curve.pd[1:] + curve.pd[:-1]) / 2.0))


def diagonal_intersection(curve):
    """Point where the ROC curve crosses the line PD = 1 - PFA."""
    g = curve.pd + curve.pfa - 1.0
    k = int(np.argmax(g >= 0))
    if g[k] == 0 or k == 0:
        return float(curve.pfa[k]), float(curve.pd[k])
    w = -g[k - 1] / (g[k] - g[k - 1])
    pfa = curve.pfa[k - 1] + w * (curve.pfa[k] - curve.pfa[k - 1])
    pd = curve.pd[k - 1] + w * (curve.pd[k] - curve.pd[k - 1])
    return float(pfa), float(pd)


def diagonal_distance(curve):
    """Distance from (PFA=1, PD=0) to the diagonal crossing, divided by sqrt(2).

    On the line PD = 1 - PFA this equals the PD of the crossing point, so
    the value lies in [0, 1] with 1 for a perfect detector.
    """
    pfa, pd = diagonal_intersection(curve)
    return float(np.hypot(1.0 - pfa, pd) / np.sqrt(2.0))


# -- change generation -------------------------------------------------------

@dataclass(frozen=True)
class ChangeSpec:
    """Copy-paste change: masked pixels take the value found ``source_offset`` away."""

    mask: BinaryChangeMask
    source_offset: tuple

    def __post_init__(self):
        h, w = self.mask.values.shape
        dr, dc = (int(v) for v in self.source_offset)
        object.__setattr__(self, "source_offset", (dr, dc))
        rows, cols = np.nonzero(self.mask.values)
        if rows.size and (
            rows.min() + dr < 0 or rows.max() + dr >= h
            or cols.min() + dc < 0 or cols.max() + dc >= w
        ):
            raise GeometryError("change source region falls outside the image")

    @property
    def fraction(self):
        return float(self.mask.values.mean())


def generate_change(x_ref, spec):
    """Apply a copy-paste change to every band of ``x_ref``."""
    data = np.asarray(getattr(x_ref, "data", x_ref), dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[None]
    if data.shape[1:] != spec.mask.values.shape:
        raise GeometryError("mask and image sizes differ")
    rows, cols = np.nonzero(spec.mask.values)
    dr, dc = spec.source_offset
    out = data.copy()
    out[:, rows, cols] = data[:, rows + dr, cols + dc]
    if squeeze:
        out = out[0]
    if isinstance(x_ref, Raster):
        return x_ref.with_data(out)
    return out


def _shape_mask(kind, h, w, area, rng):
    aspect = rng.uniform(0.6, 1.6)
    if kind == "rectangle":
        bh = max(2, int(round(np.sqrt(area * aspect))))
        bw = max(2, int(round(area / bh)))
        shape = np.ones((bh, bw), bool)
    elif kind == "ellipse":
        a = np.sqrt(area * aspect / np.pi)
        b = area / (np.pi * a)
        bh, bw = int(np.ceil(2 * a)) + 1, int(np.ceil(2 * b)) + 1
        yy, xx = np.mgrid[:bh, :bw]
        shape = ((yy - (bh - 1) / 2) / a) ** 2 + ((xx - (bw - 1) / 2) / b) ** 2 <= 1.0
    else:  # L-shape: a box with one quarter removed
        bh = max(3, int(round(np.sqrt(4 * area / 3 * aspect))))
        bw = max(3, int(round(4 * area / 3 / bh)))
        shape = np.ones((bh, bw), bool)
        corner = int(rng.integers(4))
        hh, hw = bh // 2, bw // 2
        sl = [(slice(0, hh), slice(0, hw)), (slice(0, hh), slice(bw - hw, bw)),
              (slice(bh - hh, bh), slice(0, hw)), (slice(bh - hh, bh), slice(bw - hw, bw))][corner]
        shape[sl] = False
    if shape.shape[0] >= h or shape.shape[1] >= w:
        return None
    r = int(rng.integers(0, h - shape.shape[0] + 1))
    c = int(rng.integers(0, w - shape.shape[1] + 1))
    m = np.zeros((h, w), bool)
    m[r:r + shape.shape[0], c:c + shape.shape[1]] = shape
    return m


def _pick_offset(m, rng, min_shift):
    h, w = m.shape
    rows, cols = np.nonzero(m)
    lo_r, hi_r = -rows.min(), h - 1 - rows.max()
    lo_c, hi_c = -cols.min(), w - 1 - cols.max()
    for _ in range(200):
        dr = int(rng.integers(lo_r, hi_r + 1))
        dc = int(rng.integers(lo_c, hi_c + 1))
        if max(abs(dr), abs(dc)) < min_shift:
            continue
        if not np.any(m[rows + dr, cols + dc]):
            return dr, dc
    return None


def make_mask_library(dims, seed, target_fraction=None):
    """Ten deterministic copy-paste change specifications.

    Shapes cycle through rectangles, ellipses and L-shapes. Without
    ``target_fraction`` the covered fractions are spread over [0.02, 0.15];
    otherwise every mask covers ``target_fraction`` up to rasterization.
    The source region of each spec never overlaps its own mask.
    """
    h, w = int(dims[0]), int(dims[1])
    if h < MIN_LIBRARY_DIM or w < MIN_LIBRARY_DIM:
        raise GeometryError(f"mask library needs images of at least {MIN_LIBRARY_DIM}x{MIN_LIBRARY_DIM}")
    if target_fraction is None:
        fractions = np.linspace(0.03, 0.14, N_LIBRARY_MASKS)
    else:
        if not MIN_COVERAGE <= target_fraction <= MAX_COVERAGE:
            raise ParamError("target_fraction must lie in [0.02, 0.15]")
        fractions = np.full(N_LIBRARY_MASKS, float(target_fraction))
    rng = np.random.default_rng([int(seed), 0x6D61736B])
    kinds = ("rectangle", "ellipse", "L")
    library = []
    for i, frac in enumerate(fractions):
        for _ in range(1000):
            m = _shape_mask(kinds[i % 3], h, w, frac * h * w, rng)
            if m is None or not MIN_COVERAGE <= m.mean() <= MAX_COVERAGE:
                continue
            off = _pick_offset(m, rng, min_shift=max(2, min(h, w) // 8))
            if off is not None:
                library.append(ChangeSpec(BinaryChangeMask(m.astype(np.uint8)), off))
                break
        else:  # pragma: no cover - geometry always admits a placement at >= 32 px
            raise GeometryError("could not place a change mask")
    return library


# -- reference scenes --------------------------------------------------------

# minimum separation of class SAR responses, relative to the brightest
# class and in log-intensity
SAR_CLASS_GAP = 0.08
SAR_CLASS_LOG_GAP = 0.25


def _sar_mix(rgb):
    """Monotone nonlinear band mix standing in for the radar response."""
    r, g, b = rgb
    return (0.6 + 0.9 * r - 0.6 * g + 0.5 * b) ** 1.5


def _pick_signatures(lattice, n, rng):
    """Greedy random choice of ``n`` lattice colours with distinct SAR responses."""
    v = _sar_mix(lattice.T)
    top = v.max()
    for _ in range(1000):
        chosen = []
        for i in rng.permutation(len(lattice)):
            if all(abs(v[i] - v[j]) >= SAR_CLASS_GAP * top
                   and abs(np.log(v[i] / v[j])) >= SAR_CLASS_LOG_GAP for j in chosen):
                chosen.append(i)
                if len(chosen) == n:
                    return lattice[chosen]
    raise ParamError(f"cannot pick {n} classes with separated SAR responses")


def make_reference_scenes(height, width, seed, n_classes=6):
    """Procedural co-registered optical (3 bands) and SAR (1 band) latent scenes.

    A blurred random field picks a land-cover class per pixel; every class
    has its own RGB signature and mild texture. The SAR scene is a fixed
    nonlinear mix of the optical bands, so both share geometry but not
    radiometry. Returns ``(optical, sar)`` rasters with values in (0, 1].
    """
    rng = np.random.default_rng([int(seed), 0x7363656E])
    blur = max(height, width) / 14.0
    fields = np.stack([gaussian_filter(rng.standard_normal((height, width)), blur, mode="reflect")
                       for _ in range(n_classes)])
    labels = np.argmax(fields, axis=0)
    # well separated signatures: a shuffled lattice in RGB space, redrawn
    # until every pair of classes also differs clearly in SAR intensity
    levels = np.array([0.15, 0.5, 0.85])
    lattice = np.array(np.meshgrid(levels, levels, levels, indexing="ij")).reshape(3, -1).T
    sig = _pick_signatures(lattice, n_classes, rng)
    sig = np.clip(sig + rng.uniform(-0.03, 0.03, sig.shape), 0.05, 0.95)
    optical = sig[labels].transpose(2, 0, 1)
    texture = np.stack([gaussian_filter(rng.standard_normal((height, width)), 1.0)
                        for _ in range(3)])
    texture /= texture.std()
    shading = gaussian_filter(rng.standard_normal((height, width)), blur * 2)
    shading /= max(shading.std(), 1e-12)
    optical = optical + 0.04 * texture + 0.03 * shading
    optical = gaussian_filter(optical, (0, 0.6, 0.6))
    optical = np.clip(optical, 0.02, 1.0)

    sar = _sar_mix(optical)
    sar = sar / sar.max()
    return Raster(optical, Modality.OPTICAL), Raster(sar[None], Modality.SAR)


# -- scenarios ---------------------------------------------------------------

SCENARIO_MODALITIES = {
    1: ((Modality.OPTICAL, Modality.OPTICAL),),
    2: ((Modality.SAR, Modality.SAR),),
    3: ((Modality.OPTICAL, Modality.SAR), (Modality.SAR, Modality.OPTICAL)),
}

DEFAULT_SENSORS = {
    Modality.OPTICAL: SensorModel(Modality.OPTICAL, noise_sigma=0.02),
    Modality.SAR: SensorModel(Modality.SAR, looks=5),
}


# a masked pixel counts as altered when its RGB value moves by more than this
ALTERED_PIXEL_DIFF = 0.2


def altered_fraction(x_ref, spec, min_diff=ALTERED_PIXEL_DIFF):
    """Share of masked pixels whose value the copy-paste actually changes."""
    data = np.asarray(getattr(x_ref, "data", x_ref), dtype=np.float64)
    diff = generate_change(data, spec) - data
    if diff.ndim == 3:
        diff = np.sqrt(np.sum(diff * diff, axis=0))
    m = spec.mask.values == 1
    return float(np.mean(np.abs(diff[m]) > min_diff))


def select_change(library, x_ref):
    """Library entry whose copy-paste alters the largest share of ``x_ref``.

    A source region of the same land cover as the target leaves the scene
    untouched, so such a draw would label unchanged pixels as changed. Ties
    go to the earliest entry.
    """
    scores = [altered_fraction(x_ref, spec) for spec in library]
    return library[int(np.argmax(scores))]


@dataclass
class SimulatedPair:
    """Everything produced for one scenario draw."""

    reference1: Raster
    reference2: Raster
    changed2: Raster
    observed1: Raster
    observed2: Raster
    truth: BinaryChangeMask
    spec: ChangeSpec


def check_scenario(scenario):
    if scenario not in SCENARIO_MODALITIES:
        raise ParamError(f"scenario must be 1, 2 or 3, got {scenario!r}")


def simulate_pair(scenario, seed, size=96, pairing=0, change_fraction=0.10,
                  sensors=None, noise_free=False, with_change=True):
    """Build the latent and observed pair of one scenario draw.

    ``pairing`` selects the modality order for scenario 3 (0: optical then
    SAR, 1: SAR then optical). The change is planted in the second image
    using the mask of the library drawn for ``seed`` that alters the most
    pixels of the optical reference (see :func:`select_change`).
    """
    check_scenario(scenario)
    pairs = SCENARIO_MODALITIES[scenario]
    m1, m2 = pairs[pairing % len(pairs)]
    sensors = dict(DEFAULT_SENSORS, **(sensors or {}))
    optical, sar = make_reference_scenes(size, size, seed)
    scenes = {Modality.OPTICAL: optical, Modality.SAR: sar}
    ref1, ref2 = scenes[m1], scenes[m2]
    library = make_mask_library((size, size), seed, target_fraction=change_fraction)
    spec = select_change(library, optical)
    changed2 = generate_change(ref2, spec) if with_change else ref2
    if noise_free:
        obs1, obs2 = ref1, changed2
    else:
        ss = np.random.SeedSequence([int(seed), scenario, pairing])
        s1, s2 = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
        obs1 = apply_sensor_model(ref1, sensors[m1], s1)
        obs2 = apply_sensor_model(changed2, sensors[m2], s2)
    truth = spec.mask if with_change else BinaryChangeMask(np.zeros((size, size), np.uint8))
    return SimulatedPair(ref1, ref2, changed2, obs1, obs2, truth, spec)


@dataclass
class ScenarioResult:
    auc: float
    distance: float
    energies: list
    truth: BinaryChangeMask
    curves: list

    def __iter__(self):
        # unpacks as (auc, distance)
        return iter((self.auc, self.distance))


def run_scenario(scenario, seed, config=None, size=96, change_fraction=0.10, sensors=None,
                 pairings=None):
    """Simulate, detect and score one scenario draw.

    Scenario 3 runs both modality orders and averages their metrics.
    ``config`` is a :class:`~coupledcd.palm.SolverConfig` (defaults used if
    omitted).
    """
    from .estimator import CoupledDictionaryChangeDetector
    from .palm import SolverConfig

    check_scenario(scenario)
    config = config or SolverConfig()
    if pairings is None:
        pairings = range(len(SCENARIO_MODALITIES[scenario]))
    aucs, dists, energies, curves = [], [], [], []
    truth = None
    for pairing in pairings:
        sim = simulate_pair(scenario, seed, size, pairing, change_fraction, sensors)
        det = CoupledDictionaryChangeDetector.from_config(config)
        energy = det.fit_transform(sim.observed1, sim.observed2)
        curve = roc_curve(energy, sim.truth)
        aucs.append(auc(curve))
        dists.append(diagonal_distance(curve))
        energies.append(energy)
        curves.append(curve)
        truth = sim.truth
    return ScenarioResult(float(np.mean(aucs)), float(np.mean(dists)), energies, truth, curves)
