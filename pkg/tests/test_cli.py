import json

import numpy as np
import pytest

from coupledcd import cli, evaluation, raster
from coupledcd.exceptions import NumericalError
from coupledcd.raster import BinaryChangeMask, Modality, Raster

FAST = {"n_atoms": 8, "patch_size": 3, "stride": 2, "max_iters": 4, "size": 40}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(FAST))
    return str(path)


@pytest.fixture
def scene(tmp_path, config):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", config, "--scenario", "1", "--seed", "7",
                     "--out-dir", str(out)]) == 0
    return out


def _detect(scene, config, out, *extra):
    return cli.main(["detect", "--config", config, "--input1", str(scene / "observed1.rimg"),
                     "--input2", str(scene / "observed2.rimg"), "--out-energy", str(out), *extra])


def test_simulate_is_reproducible(tmp_path, config, scene):
    again = tmp_path / "again"
    assert cli.main(["simulate", "--config", config, "--scenario", "1", "--seed", "7",
                     "--out-dir", str(again)]) == 0
    names = sorted(p.name for p in scene.iterdir())
    assert names == sorted(p.name for p in again.iterdir())
    assert "truth.pgm" in names and "observed2.rimg" in names
    for name in names:
        assert (scene / name).read_bytes() == (again / name).read_bytes()


def test_simulated_truth_within_library_bounds(scene):
    truth = raster.read_mask(scene / "truth.pgm")
    assert evaluation.MIN_COVERAGE <= truth.values.mean() <= evaluation.MAX_COVERAGE


def test_simulate_rejects_unknown_scenario(tmp_path, config, capsys):
    assert cli.main(["simulate", "--config", config, "--scenario", "4", "--out-dir", str(tmp_path)]) == 2
    assert "scenario" in capsys.readouterr().err


def test_detect_writes_outputs(tmp_path, config, scene):
    energy, mask, trace = tmp_path / "e.rimg", tmp_path / "m.pgm", tmp_path / "t.csv"
    assert _detect(scene, config, energy, "--out-mask", str(mask), "--threshold", "0.5",
                   "--trace", str(trace)) == 0
    e = raster.read_raster(energy)
    assert e.bands == 1 and (e.height, e.width) == (40, 40)
    assert raster.read_mask(mask).values.shape == (40, 40)
    assert len(trace.read_text().splitlines()) == 1 + FAST["max_iters"]


def test_detect_threshold_monotone(tmp_path, config, scene):
    energy = tmp_path / "e.rimg"
    assert _detect(scene, config, energy) == 0
    e = raster.read_raster(energy).data[0]
    lo, hi = np.quantile(e, [0.5, 0.9])
    masks = []
    for t in (lo, hi):
        out = tmp_path / f"m{t}.pgm"
        assert _detect(scene, config, energy, "--out-mask", str(out), "--threshold", repr(float(t))) == 0
        masks.append(raster.read_mask(out).values)
    assert np.all(masks[1] <= masks[0]) and masks[1].sum() < masks[0].sum()


def test_detect_missing_input(tmp_path, config, capsys):
    rc = cli.main(["detect", "--config", config, "--input1", str(tmp_path / "nope.rimg"),
                   "--input2", str(tmp_path / "nope2.rimg"), "--out-energy", str(tmp_path / "e.rimg")])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_detect_thread_count_does_not_change_result(tmp_path, config, scene):
    a, b = tmp_path / "a.rimg", tmp_path / "b.rimg"
    assert _detect(scene, config, a, "--threads", "1") == 0
    assert _detect(scene, config, b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_detect_numerical_failure_exit_code(tmp_path, config, scene, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalError("objective is NaN at iteration 3")

    monkeypatch.setattr("coupledcd.palm.run", boom)
    assert _detect(scene, config, tmp_path / "e.rimg") == 4


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"smoothing": {"eps_bogus": 1}}, {"smoothing": 3}, [1, 2]])
def test_bad_config_exit_code(tmp_path, scene, doc):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert _detect(scene, str(path), tmp_path / "e.rimg") == 2


def test_bad_parameter_value_exit_code(tmp_path, scene):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"lambda": -1.0}))
    assert _detect(scene, str(path), tmp_path / "e.rimg") == 2


def test_config_lambda_key():
    assert cli.solver_config({"lambda": 0.25}).lam == 0.25
    assert cli.solver_config({"lam": 0.25}).lam == 0.25
    assert cli.solver_config({"smoothing": {"eps_code": 0.5}}, seed=9).smoothing.eps_code == 0.5
    with pytest.raises(cli.UsageError):
        cli.solver_config({"lam": 0.1, "lambda": 0.2})


def test_invalid_json_config(tmp_path, scene):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert _detect(scene, str(path), tmp_path / "e.rimg") == 2


def test_eval_perfect_energy(tmp_path, scene):
    truth = raster.read_mask(scene / "truth.pgm")
    energy = tmp_path / "e.rimg"
    raster.write_raster(Raster(truth.values.astype(float), Modality.OPTICAL), energy)
    out = tmp_path / "ev"
    assert cli.main(["eval", "--input1", str(energy), "--input2", str(scene / "truth.pgm"),
                     "--out-dir", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["auc"] == 1.0 and metrics["distance"] == 1.0


def test_eval_matches_library(tmp_path, scene, rng):
    truth = raster.read_mask(scene / "truth.pgm")
    e = Raster(rng.uniform(0, 1, truth.values.shape), Modality.OPTICAL)
    path = tmp_path / "e.rimg"
    raster.write_raster(e, path)
    e = raster.read_raster(path)
    out = tmp_path / "ev"
    assert cli.main(["eval", "--input1", str(path), "--input2", str(scene / "truth.pgm"),
                     "--out-dir", str(out)]) == 0
    curve = evaluation.roc_curve(e, truth)
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics == {"auc": evaluation.auc(curve), "distance": evaluation.diagonal_distance(curve)}
    rows = np.loadtxt(out / "roc.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 0], curve.pfa)
    np.testing.assert_array_equal(rows[:, 1], curve.pd)


def test_eval_mismatched_dims(tmp_path, scene):
    path = tmp_path / "e.rimg"
    raster.write_raster(Raster(np.zeros((10, 10)), Modality.OPTICAL), path)
    assert cli.main(["eval", "--input1", str(path), "--input2", str(scene / "truth.pgm"),
                     "--out-dir", str(tmp_path)]) == 3


def test_missing_required_flag(tmp_path):
    assert cli.main(["eval", "--out-dir", str(tmp_path)]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
