import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from coupledcd import CoupledDictionaryChangeDetector
from coupledcd.exceptions import DataError, DegenerateError, ParamError
from coupledcd.palm import SolverConfig
from coupledcd.raster import Modality, Raster

SMALL = dict(n_atoms=8, patch_size=3, stride=1, max_iters=5, seed=1)


def _pair(rng, h=10):
    y1 = rng.uniform(0.2, 1.0, (2, h, h))
    y2 = rng.uniform(0.2, 1.0, (1, h, h))
    return y1, y2


def test_params_round_trip_and_clone():
    det = CoupledDictionaryChangeDetector(lam=0.3, normalize="max")
    params = det.get_params()
    assert params["lam"] == 0.3 and params["normalize"] == "max"
    twin = clone(det)
    assert twin.get_params() == params and twin is not det
    det.set_params(gamma=0.9)
    assert det.gamma == 0.9


def test_defaults_match_solver_config():
    cfg = CoupledDictionaryChangeDetector().solver_config()
    ref = SolverConfig()
    for name in ("lam", "gamma", "sigma1_sq", "sigma2_sq", "n_atoms", "patch_size", "stride",
                 "max_iters", "rel_tol", "seed", "smoothing"):
        assert getattr(cfg, name) == getattr(ref, name), name


def test_from_config_overrides():
    cfg = SolverConfig(lam=0.2, n_atoms=16)
    det = CoupledDictionaryChangeDetector.from_config(cfg, aggregation="max")
    assert det.lam == 0.2 and det.n_atoms == 16 and det.aggregation == "max"


def test_fit_transform_predict(rng):
    y1, y2 = _pair(rng)
    det = CoupledDictionaryChangeDetector(**SMALL)
    energy = det.fit_transform(y1, y2)
    assert energy.shape == (10, 10) and np.all(energy >= 0)
    assert det.n_iter_ == 5 and len(det.objective_trace_) == 6
    assert det.patch_energy_.shape == (64,)
    mask = det.predict(float(np.median(energy)))
    assert mask.values.shape == (10, 10) and set(np.unique(mask.values)) <= {0, 1}
    np.testing.assert_array_equal(det.transform(), energy)


def test_fit_is_deterministic(rng):
    y1, y2 = _pair(rng)
    a = CoupledDictionaryChangeDetector(**SMALL).fit_transform(y1, y2)
    b = CoupledDictionaryChangeDetector(**SMALL).fit_transform(y1, y2)
    np.testing.assert_array_equal(a, b)


def test_rasters_carry_modality(rng):
    y1, y2 = _pair(rng)
    det = CoupledDictionaryChangeDetector(**SMALL).fit(Raster(y1, Modality.OPTICAL),
                                                      Raster(y2, Modality.SAR))
    assert det.problem_.modality2 is Modality.SAR
    r = det.energy_raster(2.0)
    assert r.bands == 1 and r.resolution == 2.0


@pytest.mark.parametrize("how,expected", [("max", np.max), ("mean", np.mean), ("none", lambda a: 1.0)])
def test_normalization_scales(rng, how, expected):
    y1, y2 = _pair(rng)
    det = CoupledDictionaryChangeDetector(normalize=how, **SMALL).fit(y1, y2)
    assert det.scales_ == (pytest.approx(expected(y1)), pytest.approx(expected(y2)))


def test_errors(rng):
    y1, y2 = _pair(rng)
    with pytest.raises(NotFittedError):
        CoupledDictionaryChangeDetector().predict(0.1)
    with pytest.raises(ParamError):
        CoupledDictionaryChangeDetector(aggregation="median", **SMALL).fit(y1, y2)
    with pytest.raises(ParamError):
        CoupledDictionaryChangeDetector(normalize="l2", **SMALL).fit(y1, y2)
    with pytest.raises(DegenerateError):
        CoupledDictionaryChangeDetector(normalize="max", **SMALL).fit(np.zeros_like(y1), y2)
    bad = y1.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        CoupledDictionaryChangeDetector(**SMALL).fit(bad, y2)
    with pytest.raises(DataError):
        CoupledDictionaryChangeDetector(**SMALL).fit(y1, -y2, modality2="sar")
    det = CoupledDictionaryChangeDetector(**SMALL).fit(y1, y2)
    with pytest.raises(ParamError):
        det.predict()
    with pytest.raises(ParamError):
        det.transform(y1)
